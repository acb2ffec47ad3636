"""Anatomical skeleton fitting inside a parametric body from 2D keypoints."""

__version__ = "0.1.0"
