"""Electro-hydrodynamic membrane cell simulator and estimate auditor."""

__version__ = "0.1.0"
