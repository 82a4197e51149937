"""Simulation and analysis of dynamical-decoupling protocols on NV-center spins."""

__version__ = "0.1.0"
