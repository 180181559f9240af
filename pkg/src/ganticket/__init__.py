"""Lottery-ticket experiments for small adversarially trained generators."""

__version__ = "0.1.0"
