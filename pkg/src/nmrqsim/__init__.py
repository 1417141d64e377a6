"""Liquid-state NMR quantum computing simulator: GHZ preparation on a three-spin molecule."""

__version__ = "0.1.0"
