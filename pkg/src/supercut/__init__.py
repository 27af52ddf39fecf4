"""Superpoint-graph 3D instance segmentation driven by promptable 2D mask oracles."""

__version__ = "0.1.0"
