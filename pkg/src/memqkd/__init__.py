"""Post-processing and simulation toolkit for memory-based entanglement QKD."""

__version__ = "0.1.0"
