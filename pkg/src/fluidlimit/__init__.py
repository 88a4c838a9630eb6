"""Fluid-limit approximation of Markov chains with explicit error probabilities."""

__version__ = "0.1.0"
