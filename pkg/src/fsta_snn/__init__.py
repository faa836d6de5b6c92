"""Spiking neural networks with frequency-based spatial-temporal attention, on numpy."""

__version__ = "0.1.0"
