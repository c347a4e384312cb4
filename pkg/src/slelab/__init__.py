"""Numerical laboratory for Schramm-Loewner evolutions."""

__version__ = "0.1.0"
