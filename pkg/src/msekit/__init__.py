"""msekit: minimal surface equation toolkit."""

__version__ = "0.1.0"
