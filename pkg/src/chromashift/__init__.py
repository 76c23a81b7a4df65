"""Toolkit for modeling the time course of chromatic adaptation and using it
to plan, apply, and evaluate display-power-saving illuminant shifts."""

__version__ = "0.1.0"
