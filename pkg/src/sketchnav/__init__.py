"""Sketch-map guided gridworld navigation."""

__version__ = "0.1.0"
