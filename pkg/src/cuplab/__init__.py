"""Tabular CMDP laboratory: exact DP oracle, performance-difference bounds and CUP training."""

from .cmdp import (
    Cmdp,
    SoftmaxPolicy,
    build_gridworld,
    build_random_cmdp,
    build_two_state,
    policy_distribution,
    validate_cmdp,
)
from .exact import DpSolution, objective_j, solve_policy, tilde_gamma

__version__ = "0.1.0"

__all__ = [
    "Cmdp",
    "SoftmaxPolicy",
    "build_gridworld",
    "build_random_cmdp",
    "build_two_state",
    "policy_distribution",
    "validate_cmdp",
    "DpSolution",
    "objective_j",
    "solve_policy",
    "tilde_gamma",
]
