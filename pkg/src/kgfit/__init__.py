"""Hierarchy-guided knowledge-graph embedding fine-tuning."""

__version__ = "0.1.0"
