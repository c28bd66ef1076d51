"""Exploration bonuses from learned dynamics models, with DQN-style baselines."""

__version__ = "0.1.0"
