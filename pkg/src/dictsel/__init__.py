"""Projection-score guided dictionary selection for sparse system identification."""

__version__ = "0.1.0"
