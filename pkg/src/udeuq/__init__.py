"""Uncertainty quantification for universal differential equations."""

__version__ = "0.1.0"
