"""Interpolating discrete diffusion on small categorical sequences, with an exact-enumeration verifier."""

__version__ = "0.1.0"
