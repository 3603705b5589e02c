"""Command-line driver, run configuration and file output."""
