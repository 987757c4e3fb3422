"""Simulation, reconstruction and classification for a vibrating GelSight digging finger."""

__version__ = "0.1.0"
