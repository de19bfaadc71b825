"""Semantic few-shot task sampling and coarsity-aware evaluation."""

__version__ = "0.1.0"
