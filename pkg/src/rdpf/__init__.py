"""Copula-based estimation of rate-distortion, rate-distortion-perception and
entropic optimal transport values for continuous sources."""

__version__ = "0.1.0"
