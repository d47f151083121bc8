"""Yaw-equivariant displacement priors for inertial odometry."""

__version__ = "0.1.0"
