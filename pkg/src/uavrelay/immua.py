"""Alternating trajectory / association optimization.

Each outer iteration rebuilds the surrogate bounds at the current plan,
solves the mobility subproblem for the current association, then
re-optimizes the association on the new plan. Iterates are accepted only
when the exact weighted sum rate does not decrease.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import association, mobility
from . import surrogate as sg
from .barrier import BarrierOptions
from .mobility import InfeasibleScenarioError
from .scenario import (EPS_FEAS, Scenario, TrajectoryPlan, association_from_labels, audit_plan,
                       causality_slack, check_association, hover_plan, rate_profile, slot_user_rates)

log = logging.getLogger(__name__)


@dataclass
class ImmuaConfig:
    max_outer: int = 30
    tol_outer: float = 1e-4
    mono_tol: float = 1e-12
    barrier: BarrierOptions = field(default_factory=BarrierOptions)
    assoc_max_iter: int = 5000


@dataclass
class ImmuaResult:
    plan: TrajectoryPlan
    assoc: np.ndarray
    objective_trace: list
    converged: bool
    outer_iterations: int
    history: list = field(default_factory=list)
    violations: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def exact_objective(scenario: Scenario, plan: TrajectoryPlan, assoc) -> float:
    """Weighted sum of the per-CEU average rates with the exact rate model."""
    return float(scenario.weights @ rate_profile(scenario, plan, assoc).per_user)


def joint_violations(scenario: Scenario, plan: TrajectoryPlan, assoc) -> dict:
    """Normalized violations of the mobility, causality and floor constraints (0 when satisfied)."""
    viol = dict(audit_plan(scenario, plan).violations)
    prof = rate_profile(scenario, plan, assoc)
    scale = max(1.0, float(np.cumsum(prof.uplink).max()))
    viol["causality"] = max(0.0, -float(causality_slack(prof).min())) / scale
    floors = scenario.rate_floor
    viol["rate_floor"] = float(np.max(np.maximum(floors - prof.per_user, 0.0) / np.maximum(floors, 1.0)))
    return viol


def is_jointly_feasible(scenario: Scenario, plan: TrajectoryPlan, assoc, tol: float = EPS_FEAS) -> bool:
    return all(v <= tol for v in joint_violations(scenario, plan, assoc).values())


def initialize(scenario: Scenario):
    """Hover at the start point and serve the nearest CEU in every slot the buffer allows.

    When the nearest-CEU association misses a rate floor, the association
    solver is run on the hover plan instead. Raises
    :class:`InfeasibleScenarioError` naming the constraint if neither works.
    """
    plan = hover_plan(scenario)
    rates = slot_user_rates(scenario, plan.positions)
    uplink = association.slot_uplink(scenario, plan)
    dist = np.linalg.norm(scenario.ceu_positions - scenario.start_point, axis=1)
    nearest = int(np.argmin(dist))  # lowest index on ties
    labels = np.full(scenario.num_slots, -1)
    received = np.cumsum(uplink)
    sent = 0.0
    for p in range(1, scenario.num_slots):
        rate = rates[nearest, p]
        if sent + rate <= received[p - 1] + association.CAUSALITY_TOL:
            labels[p] = nearest
            sent += rate
    assoc = association_from_labels(scenario, labels)
    viol = joint_violations(scenario, plan, assoc)
    if viol["rate_floor"] <= EPS_FEAS:
        return plan, assoc
    sol = association.solve(scenario, plan, max_iter=5000, rates=rates, uplink=uplink)
    if sol.primal_feasible:
        return plan, sol.assoc
    short = sol.diagnostics["floor_shortfall"]
    which = "rate_floor" if np.any(short > EPS_FEAS) else "causality"
    raise InfeasibleScenarioError(f"no feasible initial association at hover ({which} violated)")


def _step(scenario, plan, assoc, config):
    """One mobility solve followed by one association solve."""
    model = sg.build(scenario, plan)
    mob = mobility.solve(scenario, model, assoc, plan, options=config.barrier)
    new_plan = mob.plan if mob.surrogate_feasible else plan
    asol = association.solve(scenario, new_plan, incumbent=assoc, max_iter=config.assoc_max_iter)
    new_assoc = asol.assoc if asol.primal_feasible else assoc
    return mob, asol, new_plan, new_assoc


def run(scenario: Scenario, config: ImmuaConfig | None = None, init=None) -> ImmuaResult:
    """Alternate mobility and association solves until the objective settles.

    ``init`` is an optional ``(plan, assoc)`` starting pair; by default
    :func:`initialize` supplies it.
    """
    config = config or ImmuaConfig()
    if init is None:
        plan, assoc = initialize(scenario)
    else:
        plan, assoc = init
        assoc = check_association(scenario, assoc)
        if not is_jointly_feasible(scenario, plan, assoc):
            viol = joint_violations(scenario, plan, assoc)
            bad = next(k for k, v in viol.items() if v > EPS_FEAS)
            raise InfeasibleScenarioError(f"initial point violates {bad}")
    objective = exact_objective(scenario, plan, assoc)
    trace = [objective]
    history = [{"iteration": 0, "objective": objective, "surrogate": np.nan, "mobility_status": "init",
                "newton_steps": 0, "dual_gap": np.nan, "accepted": True, "damping": 1.0}]
    converged = False
    outer = 0
    for outer in range(1, config.max_outer + 1):
        mob, asol, new_plan, new_assoc = _step(scenario, plan, assoc, config)
        new_obj = exact_objective(scenario, new_plan, new_assoc)
        damping = 1.0
        ok = new_obj >= objective - config.mono_tol and is_jointly_feasible(scenario, new_plan, new_assoc)
        if not ok:
            # one damped retry on the segment between the old and the new plan
            damping = 0.5
            mid = TrajectoryPlan(plan.positions + damping * (new_plan.positions - plan.positions),
                                 plan.velocities + damping * (new_plan.velocities - plan.velocities),
                                 plan.accelerations + damping * (new_plan.accelerations - plan.accelerations))
            asol = association.solve(scenario, mid, incumbent=assoc, max_iter=config.assoc_max_iter)
            cand = asol.assoc if asol.primal_feasible else assoc
            if is_jointly_feasible(scenario, mid, cand):
                mid_obj = exact_objective(scenario, mid, cand)
                if mid_obj >= objective - config.mono_tol:
                    new_plan, new_assoc, new_obj, ok = mid, cand, mid_obj, True
        history.append({"iteration": outer, "objective": new_obj if ok else objective,
                        "surrogate": mob.objective, "mobility_status": mob.status,
                        "newton_steps": mob.iterations["newton"], "dual_gap": asol.gap,
                        "accepted": ok, "damping": damping})
        if not ok:
            trace.append(objective)
            converged = True
            log.info("outer iteration %d rejected; stopping", outer)
            break
        change = (new_obj - objective) / max(abs(objective), 1e-12)
        plan, assoc, objective = new_plan, new_assoc, new_obj
        trace.append(objective)
        log.info("outer iteration %d: objective %.9g (change %.3g)", outer, objective, change)
        if abs(change) < config.tol_outer:
            converged = True
            break
    viol = joint_violations(scenario, plan, assoc)
    return ImmuaResult(plan, assoc, trace, converged, outer, history, viol)
