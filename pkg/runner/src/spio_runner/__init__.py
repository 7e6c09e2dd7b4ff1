"""Isolated executor for generated scripts with output profiling."""

__version__ = "0.1.0"
