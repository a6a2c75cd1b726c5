"""Bilateral speech enhancement with trained gain tables."""

__version__ = "0.1.0"
