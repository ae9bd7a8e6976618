"""Omission detection and weighting for dialogue summaries."""

__version__ = "0.1.0"
