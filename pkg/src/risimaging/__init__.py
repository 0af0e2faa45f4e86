"""Simulation and reconstruction toolkit for RIS-aided WiFi imaging."""

__version__ = "0.1.0"
