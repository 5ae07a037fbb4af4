"""Numerical type-II mean curvature flow with bounded mean curvature on Lawson cones."""
__version__ = "0.1.0"
