"""Heterogeneous multi-robot assembly: group negotiation planner and planar simulator."""

__version__ = "0.1.0"
