"""Command-line experiments: configuration, orchestration and CSV/JSON output."""
