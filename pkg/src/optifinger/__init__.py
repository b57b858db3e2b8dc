"""Simulation and learning toolkit for an optically sensorized robot finger."""

__version__ = "0.1.0"
