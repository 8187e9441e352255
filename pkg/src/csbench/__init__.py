"""Code-switching ASR benchmark builder and evaluation toolkit."""

__version__ = "0.1.0"
