"""Hilbert-ordered hybrid Gated-CNN / bidirectional-SSM aggregator for tile bags."""

__version__ = "0.1.0"
