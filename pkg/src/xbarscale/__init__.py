"""Hierarchical crossbar fabric modeling toolkit."""

__version__ = "0.1.0"
