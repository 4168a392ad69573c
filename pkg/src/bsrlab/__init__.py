"""Simulation and theory of bounded-size ℓ-vertex random graph processes."""

__version__ = "0.1.0"
