"""Dual-stream flow-matching video generation with disentangled camera and object motion."""

__version__ = "0.1.0"
