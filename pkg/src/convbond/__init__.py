"""Callable convertible bond: obstacle-problem solver and free-boundary diagnostics."""

__version__ = "0.1.0"
