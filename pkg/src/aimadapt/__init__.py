"""Adaptive ansatz construction driven by reusable informationally complete measurement data."""

__version__ = "0.1.0"
