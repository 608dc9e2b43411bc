"""Detect anomalous runs of a multi-state system and rank the sensors that caused them."""

__version__ = "0.1.0"
