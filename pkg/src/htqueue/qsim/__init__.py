"""Discrete-event simulator of the n-th multiclass G/G/1 system with finite buffers."""
from .primitives import dist_moments, dist_params
from .sim import (CustomerLog, SimRecord, class_generators, cost_estimate, default_astar,
                  free_boundary_for, policy_ao, policy_fixed_priority, run, ssc_deviation,
                  truncation_bound)

__all__ = [
    "CustomerLog", "SimRecord", "class_generators", "cost_estimate", "default_astar", "dist_moments",
    "dist_params", "free_boundary_for", "policy_ao", "policy_fixed_priority", "run", "ssc_deviation",
    "truncation_bound",
]
