"""Learned piece-wise linear CDF models as hash functions."""

__version__ = "0.1.0"
