"""Variational autoencoders trained with interval-likelihood bounds."""

__version__ = "0.1.0"
