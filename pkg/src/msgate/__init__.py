"""Simulation and analysis of microwave-driven Molmer-Sorensen gates on trapped ions."""

__version__ = "0.1.0"
