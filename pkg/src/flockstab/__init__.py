"""Numerical laboratory for the stability of translating swarm states."""
__version__ = "0.1.0"
