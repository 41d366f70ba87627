"""Robust secure ISAC beamforming with a transmissive surface and rate splitting."""

__version__ = "0.1.0"
