"""Dissipative implicit residual layers for learning attractive data manifolds."""

__version__ = "0.1.0"
