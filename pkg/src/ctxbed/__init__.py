"""Contextual Bayesian experimental design by maximising an InfoNCE bound on max-value information."""

__version__ = "0.1.0"
