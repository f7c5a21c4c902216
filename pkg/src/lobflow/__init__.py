"""Order flow reconstruction from aggregated trades and quotes tick files."""

__version__ = "0.1.0"
