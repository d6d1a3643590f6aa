"""Multi-period PQ flexibility maps at the TSO-DSO interface."""

__version__ = "0.1.0"
