"""Differentiable 3D eye model fitted to pupil/iris segmentation masks."""
__version__ = "0.1.0"
