"""Desk-scale realtime user-action sequence ranking."""

__version__ = "0.1.0"
