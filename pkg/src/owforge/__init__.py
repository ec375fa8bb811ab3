"""Corpus construction and evaluation for instruction-following open-world IE."""

__version__ = "0.1.0"
