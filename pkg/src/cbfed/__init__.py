"""Pseudo-spectral simulation and feedback stabilization of convective
Brinkman-Forchheimer flows on the periodic torus."""

__version__ = "0.1.0"
