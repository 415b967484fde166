"""Numerical laboratory for enhanced dissipation in shear flows."""

__version__ = "0.1.0"
