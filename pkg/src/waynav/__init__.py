"""Occupancy-aware waypoint prediction and backtracking navigation in a planar simulator."""

__version__ = "0.1.0"
