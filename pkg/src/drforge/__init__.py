"""Desk-scale visual domain randomization laboratory for tabletop manipulation."""

__version__ = "0.1.0"
