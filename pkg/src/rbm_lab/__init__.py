"""Simulation and numerical checks for synchronously coupled reflected
Brownian motions outside a unit ball in a flat 3-torus."""

__version__ = "0.1.0"
