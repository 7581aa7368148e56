"""Game-theoretic query verification on outsourced data."""

__version__ = "0.1.0"
