"""Memory-type null control of 1-D wave equations with memory."""

__version__ = "0.1.0"
