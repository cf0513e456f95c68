"""Desk-scale Breakout laboratory: train actor-critic policies under different
preprocessing/reward regimes, blend them with an epsilon-greedy mixture rule,
and measure score, episode length, and loop ("stuck") incidence per mixing
weight."""

__version__ = "0.1.0"
