"""Optimal artificial boundary conditions for localized sources in random lattice media."""

__version__ = "0.1.0"
