"""Post-Merge Ethereum analytics toolkit."""

__version__ = "0.1.0"
