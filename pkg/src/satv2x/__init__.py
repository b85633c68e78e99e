"""Satellite-aided V2X connectivity management with attention-based multi-agent actor-critic."""

__version__ = "0.1.0"
