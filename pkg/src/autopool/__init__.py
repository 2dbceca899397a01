"""Adaptive pooling operators for multiple instance learning.

Auto-pool and its constrained (CAP) and regularized (RAP) variants, a small
instance model with exact gradients, a joint training loop, segment-based
event detection metrics, and a synthetic weakly-labelled data generator.
"""
from ._backend import BACKEND
from .pooling import (AlphaVector, PoolingOperator, cap_alpha_bound, min_weight_alpha_bound,
                      pool_auto, pool_auto_backward, pool_max, pool_mean, pool_softmax,
                      project_alpha, rap_penalty, weight_bounds)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AlphaVector", "PoolingOperator", "cap_alpha_bound", "min_weight_alpha_bound",
    "pool_auto", "pool_auto_backward", "pool_max", "pool_mean", "pool_softmax", "project_alpha",
    "rap_penalty", "weight_bounds",
]
