"""Relation extraction on visually-rich documents."""

__version__ = "0.1.0"
