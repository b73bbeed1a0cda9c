"""RTE-constrained gradient computation package."""

__version__ = "0.1.0"
