"""Finite-difference solver for singular Abreu equations and convexity-constrained minimizers."""

__version__ = "0.1.0"
