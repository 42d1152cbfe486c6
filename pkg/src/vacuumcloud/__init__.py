"""Makino-variable Euler-Poisson simulator for self-gravitating clouds with vacuum."""

__version__ = "0.1.0"
