"""Stochastic bandits with post-action contexts: UCB, C-UCB, HAC-UCB and tools."""

__version__ = "0.1.0"
