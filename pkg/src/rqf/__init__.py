"""Relational and independent Q-functionals for cooperative continuous control."""

__version__ = "0.1.0"
