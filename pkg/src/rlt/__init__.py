"""Risk-limiting tallies and risk-limiting verification."""

__version__ = "0.1.0"
