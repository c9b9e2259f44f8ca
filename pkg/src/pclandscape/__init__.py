"""Predictive-coding network training and equilibrated-energy landscape
analysis for deep linear networks."""

from .network import ArchSpec, Batch, Params

__all__ = ["ArchSpec", "Batch", "Params"]
__version__ = "0.1.0"
