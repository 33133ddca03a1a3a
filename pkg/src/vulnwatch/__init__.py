"""Unsupervised cyber-relevance filtering and data mining for vulnerability tweets."""

__version__ = "0.1.0"
