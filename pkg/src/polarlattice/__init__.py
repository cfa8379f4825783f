"""Polar lattices for the mod-Lambda Gaussian wiretap channel."""

__version__ = "0.1.0"
