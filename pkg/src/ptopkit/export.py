"""File export helpers (filled in below)."""
