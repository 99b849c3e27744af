"""Tabular offline goal-conditioned RL on gridworld mazes."""

__version__ = "0.1.0"
