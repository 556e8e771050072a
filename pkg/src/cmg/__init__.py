"""Weakly supervised text-guided editing of synthetic grid scenes."""

__version__ = "0.1.0"
