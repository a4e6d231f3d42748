"""Channelized analog short-time Fourier transform: comb plan, PD-output simulation and reconstruction."""

__version__ = "0.1.0"
