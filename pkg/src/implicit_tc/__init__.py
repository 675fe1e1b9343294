"""Discrete and continuous-time trading under supply curves with implicit costs."""

__version__ = "0.1.0"
