"""Toy-scale progressive scaling with small-teacher transfer for visual tracking."""

__version__ = "0.1.0"
