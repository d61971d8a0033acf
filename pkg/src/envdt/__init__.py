"""Uncertainty-aware environment simulation for medical-device digital twins."""

__version__ = "0.1.0"
