"""Interacting probability laws built from Gaussian laws by a generalized convolution."""

__version__ = "0.1.0"
