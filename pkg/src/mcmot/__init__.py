"""Multi-camera 3D multi-object tracking with fractional optimal transport association."""

__version__ = "0.1.0"
