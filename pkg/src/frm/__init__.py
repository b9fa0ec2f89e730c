"""Functional risk minimization for linear and differentiable models."""

__version__ = "0.1.0"
