"""Inference worker for the audit pipeline's annotation protocol."""

__version__ = "0.1.0"
