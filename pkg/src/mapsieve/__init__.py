"""Mapped sieve estimation and simultaneous inference for locally stationary regression."""

__version__ = "0.1.0"
