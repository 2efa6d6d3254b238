"""Inertia estimation of power-system devices from ambient measurement variances."""

__version__ = "0.1.0"
