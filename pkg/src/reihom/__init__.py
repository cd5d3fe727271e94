"""Reiterated homogenization of the Stokes system with two periodic fast scales."""

__version__ = "0.1.0"
