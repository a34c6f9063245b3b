"""Numerical constructions for semilinear Dirichlet problems in thin tubes."""

__version__ = "0.1.0"
