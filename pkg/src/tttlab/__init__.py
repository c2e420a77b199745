"""Test-time training with rotation self-supervision, at desk scale."""

__version__ = "0.1.0"
