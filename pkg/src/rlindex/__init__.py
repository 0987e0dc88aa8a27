"""RL Feasibility Index toolkit."""

__version__ = "0.1.0"
