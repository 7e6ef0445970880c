"""Numerical laboratory for time-inhomogeneous branching and birth-and-death processes."""

__version__ = "0.1.0"
