"""Simulation and benchmarking of a multimode-waveguide photonic reservoir."""

__version__ = "0.1.0"
