"""Rigorous growth-rate bounds for hard squares, NAK and RWIM via corner transfer matrices."""

__version__ = "0.1.0"
