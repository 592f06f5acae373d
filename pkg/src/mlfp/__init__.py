"""Multilevel fixed-point Monte Carlo for fixed-point, Bellman and optimal stopping equations."""
from .mlfp import (
    MlfpParams,
    estimate_general_batch,
    estimate_q_batch,
    estimate_stopping_batch,
    greedy_action,
    mlfp_bellman_remainder,
    mlfp_general,
    mlfp_q,
    mlfp_stopping,
    value_from_q,
)
from .rng import STREAM_VERSION, CostLedger

__version__ = "0.1.0"

__all__ = [
    "CostLedger",
    "MlfpParams",
    "STREAM_VERSION",
    "estimate_general_batch",
    "estimate_q_batch",
    "estimate_stopping_batch",
    "greedy_action",
    "mlfp_bellman_remainder",
    "mlfp_general",
    "mlfp_q",
    "mlfp_stopping",
    "value_from_q",
]
