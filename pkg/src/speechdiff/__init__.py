"""Conditional score-diffusion toolkit for speech enhancement and prompt-driven editing."""

__version__ = "0.1.0"
