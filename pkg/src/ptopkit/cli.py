"""Command-line front end (filled in below)."""

def main(argv=None):
    raise SystemExit("CLI not wired up yet")
