"""Bongard problems as a contextual bandit, with causal bounds and policy-gradient agents."""

__version__ = "0.1.0"
