"""Closed-loop video restoration with identification, routing, tools and assessment."""

__version__ = "0.1.0"
