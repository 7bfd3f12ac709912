"""Trajectory and user-association planning for a buffered UAV relay.

The UAV receives from several ground base stations, buffers the data and
forwards it to cell-edge users, one user per time slot. Planning
alternates a convexified trajectory solve with a dual-decomposition
association solve.
"""

from .immua import ImmuaConfig, ImmuaResult, exact_objective, initialize, run
from .scenario import (Scenario, ScenarioError, TrajectoryPlan, hover_plan, load_scenario,
                       rate_profile, reference_scenario)

__all__ = [
    "ImmuaConfig",
    "ImmuaResult",
    "Scenario",
    "ScenarioError",
    "TrajectoryPlan",
    "exact_objective",
    "hover_plan",
    "initialize",
    "load_scenario",
    "rate_profile",
    "reference_scenario",
    "run",
]
