"""Topology-aware curvilinear structure segmentation with a dual mini U-Net."""

__version__ = "0.1.0"
