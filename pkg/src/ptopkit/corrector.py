"""Farfield-core boundary-value corrector (filled in below)."""
