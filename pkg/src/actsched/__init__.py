"""Conditional-generative modelling of 24-hour activity schedules."""

__version__ = "0.1.0"
