"""Persistent 3D Gaussian spatial memory for embodied exploration and recall."""

__version__ = "0.1.0"
