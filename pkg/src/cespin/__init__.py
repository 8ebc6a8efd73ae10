"""Simulation and analysis toolkit for a single Ce3+ electron spin in a garnet host."""

__version__ = "0.1.0"
