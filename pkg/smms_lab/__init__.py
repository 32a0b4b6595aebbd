"""Numerical laboratory for conformal geometry on smooth metric measure spaces with boundary."""

__version__ = "1.0.0"
