"""Sparse additive kernel and functional canonical correlation analysis."""

__version__ = "0.1.0"
