"""Simulation and numerical verification for the O'Connell-Yor semi-discrete polymer."""

__version__ = "0.1.0"
