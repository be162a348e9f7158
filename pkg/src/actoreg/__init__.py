"""Offline actor-critic training with actor regularizers."""

__version__ = "0.1.0"
