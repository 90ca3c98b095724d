"""Tracking and hierarchical disentangling of qubit noise fluctuations."""

__version__ = "0.1.0"
