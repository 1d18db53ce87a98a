"""Numerics for almost-Fuchsian germs, their hyperkaehler fibre model and
their holonomy."""

__version__ = "0.1.0"
