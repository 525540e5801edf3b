"""Diffusion-augmented, adaptively weighted contrastive learning for 1-D activity signals."""

__version__ = "0.1.0"
