"""Spectral wavepacket dynamics: resonance algebra, integrated solvers and reduced envelope systems."""

__version__ = "0.1.0"
