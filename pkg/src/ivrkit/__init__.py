"""Wavepacket dynamics and IVR diagnostics for nonrotating triatomics in valence coordinates."""

__version__ = "0.1.0"
