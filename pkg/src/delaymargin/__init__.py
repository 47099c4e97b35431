"""Certified L2 and BIBO margins for linear systems with time-varying delays."""

__version__ = "0.1.0"
