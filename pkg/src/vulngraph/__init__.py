"""Dependency and vulnerability knowledge graph for the Cargo ecosystem."""

__version__ = "0.1.0"
