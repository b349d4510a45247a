"""Truncated transfer operators, conformal measures and limit theorems on
one-sided full shifts.

Submodules are imported on demand; ``thermolab.cli`` is the command line
entry point.
"""

__version__ = "0.1.0"

__all__ = ["lattice", "transfer", "conformal", "curie_weiss", "markov", "longrange", "rng", "config", "cli"]
