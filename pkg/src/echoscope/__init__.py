"""Ping echo-analysis man-in-the-middle detection for switched LANs."""

__version__ = "0.1.0"
