"""Multi-camera rig view synthesis with layered color correction."""

__version__ = "0.1.0"
