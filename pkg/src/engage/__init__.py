"""Tweet engagement prediction pipeline."""

__version__ = "0.1.0"
