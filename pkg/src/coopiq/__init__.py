"""Exact and approximate Shapley values and Shapley interactions."""

__version__ = "0.1.0"
