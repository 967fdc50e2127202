"""Nash equilibria of finite-horizon MDP congestion games."""

__version__ = "0.1.0"
