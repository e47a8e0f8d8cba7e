"""Federated spatio-temporal graph recommendation, simulated in one process."""

__version__ = "0.1.0"
