"""Desk-scale efficiency-robustness lab for image captioners."""

__version__ = "0.1.0"
