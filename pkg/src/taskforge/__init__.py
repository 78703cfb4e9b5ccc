"""Verifiable self-play engine for execution-checked visual QA tasks."""

__version__ = "0.1.0"
