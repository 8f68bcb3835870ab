"""Rare-event statistics of discretely sampled dissipative SDEs."""

__version__ = "0.1.0"
