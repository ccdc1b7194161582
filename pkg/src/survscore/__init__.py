"""Parsimonious integer risk scorecards for right-censored survival data."""

__version__ = "0.1.0"
