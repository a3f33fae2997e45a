"""Stochastic processes on manifolds with time-dependent geometry."""

__version__ = "0.1.0"
