"""Coding-rate and information-bottleneck objectives, with information-plane experiments."""

__version__ = "0.1.0"
