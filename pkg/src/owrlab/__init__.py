"""Desk-scale open-world recognition under domain shift."""
__version__ = "0.1.0"
