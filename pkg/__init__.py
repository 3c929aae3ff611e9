"""
VB Hawkes Package

Variational Bayesian inference for Hawkes processes whose triggering kernel is
the square of a sparse Gaussian process.
"""

__version__ = "0.1.0"
