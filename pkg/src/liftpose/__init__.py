"""Multi-camera geometric triangulation and lift-pose models for rodent 3D pose."""

__version__ = "0.1.0"
