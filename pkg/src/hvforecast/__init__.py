"""Probabilistic multi-zone indoor temperature forecasting for hybrid-ventilated buildings."""

__version__ = "0.1.0"
