"""Bound-preserving finite element transport solvers."""

__version__ = "0.1.0"
