"""BIBO certificates and funnel-control simulation for semilinear parabolic systems."""

__version__ = "0.1.0"
