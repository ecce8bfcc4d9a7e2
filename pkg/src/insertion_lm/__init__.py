"""Multichannel insertion-transformer language model on synthetic parallel corpora."""

__version__ = "0.1.0"
