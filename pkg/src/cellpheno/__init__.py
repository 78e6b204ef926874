"""Nucleus detection and cell-type phenotyping for H&E tissue tiles."""

__version__ = "0.1.0"
