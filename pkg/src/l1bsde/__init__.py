"""Numerical laboratory for L1-type solutions of (reflected) BSDEs on Brownian lattices."""

__version__ = "0.1.0"
