"""Experiment harness: config files, the staged pipeline, and the CLI."""
