"""Magnitude-derivative dual-encoder lab for hyperspectral classification."""

__version__ = "0.1.0"
