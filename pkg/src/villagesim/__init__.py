"""Simulation engine for planning village-level cluster trials.

Synthesizes baseline censuses, draws covariate-constrained allocations,
simulates follow-up vaccination outcomes, compares four estimators'
operating characteristics with Monte Carlo uncertainty, and computes
unmeasured-confounding sensitivity quantities.
"""

__version__ = "0.1.0"
