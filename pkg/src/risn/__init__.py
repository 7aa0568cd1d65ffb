"""Neural collocation solvers for integral and integro-differential equations."""

__version__ = "0.1.0"
