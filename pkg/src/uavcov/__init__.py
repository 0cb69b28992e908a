"""Multi-UAV coverage: K-means placement and MADDPG power allocation."""

__version__ = "0.1.0"
