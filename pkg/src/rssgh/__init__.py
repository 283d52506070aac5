"""Bayesian spatial general hazard models for relative survival."""

__version__ = "0.1.0"
