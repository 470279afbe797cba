"""Homogenization of p-Laplacian problems on rough thin domains with concentrated forcing."""

__version__ = "0.1.0"
