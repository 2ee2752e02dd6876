"""Delay-bound analysis and optimisation for uplink rate-splitting short-packet links."""

__version__ = "0.1.0"
