"""Embedding propagation (EP-B) for attributed graphs."""

__version__ = "0.1.0"
