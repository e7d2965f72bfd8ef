"""Landmark-conditioned diffusion for multi-domain face/landmark synthesis."""

__version__ = "0.1.0"
