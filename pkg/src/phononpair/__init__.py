"""Simulation and analysis of pulsed optomechanical photon-phonon pair generation."""

__version__ = "0.1.0"
