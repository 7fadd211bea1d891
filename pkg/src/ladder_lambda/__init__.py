"""Gumbel scale-parameter estimation for gapped local alignment via ladder epochs."""

__version__ = "0.1.0"
