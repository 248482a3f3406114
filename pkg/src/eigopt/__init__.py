"""Weighted Laplace eigenvalue optimization on meshed manifolds."""
__version__ = "0.1.0"
