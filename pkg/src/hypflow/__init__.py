"""Numerical laboratory for the dissipative hyperbolic geometric flow."""

__version__ = "0.1.0"
