"""Numerical lab for Carleman-weighted estimates on the mean field games system."""

__version__ = "0.1.0"
