"""Tumor region detection in tiled histology images with rotated LBP texture features."""
__version__ = "0.1.0"
