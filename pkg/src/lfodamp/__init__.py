"""Phasor-domain simulation of low-frequency oscillation damping strategies."""

__version__ = "0.1.0"
