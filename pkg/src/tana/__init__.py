"""Timed acquisition and normalisation hub for assisted-living sensing."""

__version__ = "0.1.0"
