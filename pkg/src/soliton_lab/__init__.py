"""Singular Ricci solitons, their Ricci-flow evolution and perturbations."""

__version__ = "0.1.0"
