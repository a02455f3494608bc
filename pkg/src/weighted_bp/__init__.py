"""Trainable weighted belief-propagation decoding for binary linear codes."""

__version__ = "0.1.0"
