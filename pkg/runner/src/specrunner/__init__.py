"""Sandboxed execution worker for the specharness runner protocol."""

__version__ = "0.1.0"
