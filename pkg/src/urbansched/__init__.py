"""Multi-modal urban transit scheduling toolkit."""

__version__ = "0.1.0"
