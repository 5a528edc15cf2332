"""Kernel two-sample testing with multi-population-aware MMD training.

The package trains a deep Gaussian blend kernel by stochastic ascent on a
variance-normalized discrepancy objective, then uses it for permutation
two-sample tests and single-instance detection scores. Synthetic mixture
generators, kernel-statistic diagnostics, and a binary embedding format for
precomputed features round out the toolkit.
"""

__version__ = "0.1.0"
