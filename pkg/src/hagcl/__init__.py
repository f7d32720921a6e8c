"""Graph contrastive learning with learnable edge-drop and feature-mask views."""

__version__ = "0.1.0"
