"""Reduced-order quadruped trot simulation with a constraint-enforcing reference governor."""

__version__ = "0.1.0"
