"""Dispatch-embedded long-term tail-risk assessment and mitigation."""

__version__ = "0.1.0"
