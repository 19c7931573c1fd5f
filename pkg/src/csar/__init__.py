"""Consensus-coupled sim-and-real Q-learning for grid suction picking."""

__version__ = "0.1.0"
