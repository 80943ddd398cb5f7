"""Hybrid beamforming for multiuser mmWave MIMO with low-resolution phase shifters."""

__version__ = "0.1.0"
