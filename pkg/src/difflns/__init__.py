"""Diffusion-drafted MAPF with LNS2 collision repair."""

__version__ = "0.1.0"
