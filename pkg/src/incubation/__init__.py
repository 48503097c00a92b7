"""Nonparametric estimation of incubation-time distributions from doubly censored data."""

__version__ = "0.1.0"
