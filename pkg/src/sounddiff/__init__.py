"""Desk-scale multimodal-conditioned audio diffusion."""

__version__ = "0.1.0"
