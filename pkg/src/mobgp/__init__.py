"""Mobility-driven epidemic modelling and geometric-programming mobility control."""

__version__ = "0.1.0"
