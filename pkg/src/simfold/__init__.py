"""Slow invariant manifolds from curvature-minimizing trajectory optimization."""

__version__ = "0.1.0"
