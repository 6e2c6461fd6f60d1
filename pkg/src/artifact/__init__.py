"""Correlated sparse graph alignment via tree correlation testing."""

__version__ = "0.1.0"
