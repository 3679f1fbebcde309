"""Delay-based PUF simulation and generic mixture-of-experts modelling attacks."""

__version__ = "0.1.0"
