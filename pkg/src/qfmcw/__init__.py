"""Simulation and estimation toolkit for photon-counting FMCW lidar."""

__version__ = "0.1.0"
