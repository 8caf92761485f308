"""Exact-dynamics laboratory for Lieb-Robinson bounds of perturbed spin chains."""

__version__ = "0.1.0"
