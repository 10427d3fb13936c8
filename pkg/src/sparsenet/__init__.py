"""Sparse representations: match-probability theory and sparse k-winner networks."""

__version__ = "0.1.0"
