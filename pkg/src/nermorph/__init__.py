"""Metamorphic testing and black-box repair for NER systems."""

__version__ = "0.1.0"
