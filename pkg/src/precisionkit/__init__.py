"""Precision-modulated perception and action toolkit."""
__version__ = "0.1.0"
