"""Numerical models of Lie groupoids, algebroids and their desingularization along submanifolds."""

__version__ = "0.1.0"
