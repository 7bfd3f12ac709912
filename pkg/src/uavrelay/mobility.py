"""Trajectory/velocity/acceleration optimization for a fixed association.

The convexified problem keeps positions, velocities and accelerations as
variables. Kinematics and endpoints are linear equalities; norm bounds,
surrogate rate floors and surrogate buffer causality go into the log
barrier. Floors and causality carry nonnegative slacks with an exact
penalty so the barrier always has a strictly feasible start.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import surrogate as sg
from .barrier import BarrierOptions, minimize
from .scenario import (EPS_FEAS, Scenario, TrajectoryPlan, audit_plan, check_association,
                       hover_plan, slot_user_rates)

log = logging.getLogger(__name__)


class InfeasibleScenarioError(ValueError):
    pass


@dataclass
class MobilitySolution:
    plan: TrajectoryPlan
    objective: float
    status: str
    violated: str | None
    slack_report: dict
    iterations: dict
    kkt_residual: float
    trace: list = field(default_factory=list)

    @property
    def surrogate_feasible(self) -> bool:
        return self.status == "optimal"


def penalized_slack(raw, weight):
    """Optimal slack ``s`` and shifted margin ``raw + s`` of a penalized constraint.

    Minimizes ``weight * s - log(s) - log(raw + s)`` over ``s > max(0, -raw)``.
    Both roots come from the same cancellation-free quadratic formula
    (the margin is the slack of the mirrored constraint ``-raw``).
    """
    raw = np.asarray(raw, dtype=float)

    def root(r):
        c = weight * r - 2.0
        disc = np.sqrt(c * c + 4.0 * weight * r)
        pos = c > 0
        out = np.empty_like(r)
        out[pos] = 2.0 * r[pos] / (c[pos] + disc[pos])
        out[~pos] = (disc[~pos] - c[~pos]) / (2.0 * weight)
        return out

    return root(raw), root(-raw)


def kinematic_equalities(scenario: Scenario, n_total: int):
    """``A x = b`` rows for endpoints, the two kinematic recursions and ``a[N] = 0``."""
    n = scenario.num_slots
    dt = scenario.slot_len
    iu = lambda s, j: 2 * s + j  # noqa: E731
    iv = lambda s, j: 2 * n + 2 * s + j  # noqa: E731
    ia = lambda s, j: 4 * n + 2 * s + j  # noqa: E731
    rows = []
    rhs = []

    def row(entries, value):
        r = np.zeros(n_total)
        for idx, coef in entries:
            r[idx] += coef
        rows.append(r)
        rhs.append(value)

    for j in range(2):
        row([(iu(0, j), 1.0)], scenario.start_point[j])
        row([(iu(n - 1, j), 1.0)], scenario.start_point[j])
    for s in range(n - 1):
        for j in range(2):
            row([(iv(s + 1, j), 1.0), (iv(s, j), -1.0), (ia(s, j), -dt)], 0.0)
            row([(iu(s + 1, j), 1.0), (iu(s, j), -1.0), (iv(s, j), -dt), (ia(s, j), -0.5 * dt * dt)], 0.0)
    for j in range(2):
        row([(ia(n - 1, j), 1.0)], 0.0)
    return np.array(rows), np.array(rhs)


def _motion_size(n: int) -> int:
    return 6 * n


def _add_local(hess, grad, idx, gvals, margins):
    """Barrier terms for constraints with local support.

    ``idx`` (m, q) variable indices, ``gvals`` (m, q) gradients of the
    margins, ``margins`` (m,). Adds ``-grad/margin`` and the rank-one
    ``g g^T / margin^2`` blocks.
    """
    inv = 1.0 / margins
    np.add.at(grad, idx, -gvals * inv[:, None])
    outer = gvals[:, :, None] * gvals[:, None, :] * (inv**2)[:, None, None]
    np.add.at(hess, (idx[:, :, None], idx[:, None, :]), outer)


class _NormBarrier:
    """Squared-norm bounds on displacement, speed and acceleration (shared by several problems)."""

    def __init__(self, scenario: Scenario):
        n = scenario.num_slots
        self.n = n
        self.disp_bound = (scenario.v_max * scenario.slot_len) ** 2
        self.speed_bound = scenario.v_max**2
        self.acc_bound = scenario.a_max**2
        s = np.arange(n - 1)
        j = np.arange(2)
        self.disp_idx = np.concatenate([(2 * (s + 1))[:, None] + j, (2 * s)[:, None] + j], axis=1)
        self.speed_idx = (2 * n + 2 * np.arange(n))[:, None] + j
        self.acc_idx = (4 * n + 2 * s)[:, None] + j
        self.count = (n - 1) + n + (n - 1)

    def margins(self, x):
        n = self.n
        u = x[: 2 * n].reshape(n, 2)
        v = x[2 * n : 4 * n].reshape(n, 2)
        a = x[4 * n : 6 * n].reshape(n, 2)
        du = np.diff(u, axis=0)
        return np.concatenate([
            self.disp_bound - np.einsum("ij,ij->i", du, du),
            self.speed_bound - np.einsum("ij,ij->i", v, v),
            self.acc_bound - np.einsum("ij,ij->i", a[:-1], a[:-1]),
        ])

    def add(self, x, grad, hess):
        n = self.n
        u = x[: 2 * n].reshape(n, 2)
        v = x[2 * n : 4 * n].reshape(n, 2)
        a = x[4 * n : 6 * n].reshape(n, 2)
        du = np.diff(u, axis=0)
        m_disp = self.disp_bound - np.einsum("ij,ij->i", du, du)
        m_speed = self.speed_bound - np.einsum("ij,ij->i", v, v)
        m_acc = self.acc_bound - np.einsum("ij,ij->i", a[:-1], a[:-1])
        # margins are B - |z|^2: gradient -2 z, Hessian -2 I (so -hess/margin adds +2/margin)
        _add_local(hess, grad, self.disp_idx, np.concatenate([-2 * du, 2 * du], axis=1), m_disp)
        _add_local(hess, grad, self.speed_idx, -2 * v, m_speed)
        _add_local(hess, grad, self.acc_idx, -2 * a[:-1], m_acc)
        w = 2.0 / m_disp
        for j in range(2):
            i1 = 2 * np.arange(1, n) + j
            i0 = 2 * np.arange(n - 1) + j
            np.add.at(hess, (i1, i1), w)
            np.add.at(hess, (i0, i0), w)
            np.add.at(hess, (i1, i0), -w)
            np.add.at(hess, (i0, i1), -w)
        diag = np.arange(hess.shape[0])
        hess[diag[2 * n : 4 * n], diag[2 * n : 4 * n]] += np.repeat(2.0 / m_speed, 2)
        hess[diag[4 * n : 6 * n - 2], diag[4 * n : 6 * n - 2]] += np.repeat(2.0 / m_acc, 2)
        return -np.sum(np.log(np.concatenate([m_disp, m_speed, m_acc])))


class MobilityProblem:
    """Barrier form of the convexified mobility subproblem (minimization sign).

    Variables are ``[u, v, a]`` flattened. Each floor and causality
    constraint carries a penalized slack that is minimized out in closed
    form (see :func:`penalized_slack`), so those constraints never leave
    the barrier domain and no phase-I start is needed.
    """

    def __init__(self, scenario: Scenario, model: sg.SurrogateModel, rho, penalty: float):
        self.scn = scenario
        self.model = model
        self.rho = np.asarray(rho, dtype=float)
        n, k = scenario.num_slots, scenario.num_ceus
        self.n, self.k = n, k
        self.size = _motion_size(n)
        self.A, self.b = kinematic_equalities(scenario, self.size)
        self.norms = _NormBarrier(scenario)
        # each penalized constraint contributes two log terms to the duality gap
        self.n_ineq = self.norms.count + 2 * (k + n - 1)
        self.penalty = penalty
        self.wrho = scenario.weights[:, None] * self.rho  # (K, N)
        # causality row j (slot j + 2) sums uplink over slots 0..j and downlink over 1..j+1
        idx = np.arange(n)
        self.tri_r = (idx[None, :] <= np.arange(n - 1)[:, None]).astype(float)
        self.tri_t = ((idx[None, :] >= 1) & (idx[None, :] <= np.arange(n - 1)[:, None] + 1)).astype(float)
        step = max(scenario.v_max * scenario.slot_len, 1.0)
        self.scale = np.concatenate([np.full(2 * n, step), np.full(2 * n, scenario.v_max),
                                     np.full(2 * n, scenario.a_max)])

    def positions(self, x):
        return x[: 2 * self.n].reshape(self.n, 2)

    def surrogate_terms(self, x):
        pos = self.positions(x)
        low, low_g, low_c = sg.user_lower_all(self.model, self.scn, pos)
        up_r, up_r_g, up_r_c = sg.uplink_lower_all(self.model, self.scn, pos)
        t_val, t_g, t_h = sg.user_rate_upper_terms(self.scn, pos)
        rho_t = self.rho.T  # (N, K)
        return dict(low=low, low_g=low_g, low_c=low_c, up=up_r, up_g=up_r_g, up_c=up_r_c,
                    dn=np.sum(rho_t * t_val, axis=1),
                    dn_g=np.einsum("nk,nkj->nj", rho_t, t_g),
                    dn_h=np.einsum("nk,nkj->nj", rho_t, t_h))

    def objective_value(self, x, terms=None):
        """Surrogate weighted sum rate."""
        terms = terms or self.surrogate_terms(x)
        return float(np.sum(self.wrho.T * terms["low"]) / self.n)

    def floor_terms(self, terms):
        return np.sum(self.rho.T * terms["low"], axis=0) / self.n - self.scn.rate_floor

    def causality_terms(self, terms):
        return self.tri_r @ terms["up"] - self.tri_t @ terms["dn"]

    def raw_constraints(self, terms):
        return np.concatenate([self.floor_terms(terms), self.causality_terms(terms)])

    def slacks(self, x, t):
        slack, _ = penalized_slack(self.raw_constraints(self.surrogate_terms(x)), t * self.penalty)
        return slack

    def margins(self, x):
        return self.norms.margins(x)

    def barrier(self, x, t, derivatives):
        terms = self.surrogate_terms(x)
        weight = t * self.penalty
        slack, shifted = penalized_slack(self.raw_constraints(terms), weight)
        pen = weight * slack.sum() - np.sum(np.log(slack)) - np.sum(np.log(shifted))
        value = -t * self.objective_value(x, terms) + pen
        if not derivatives:
            margins = self.norms.margins(x)
            if np.any(margins <= 0) or not np.all(np.isfinite(margins)):
                return np.inf
            return value - np.sum(np.log(margins))

        n, k = self.n, self.k
        grad = np.zeros(self.size)
        hess = np.zeros((self.size, self.size))
        phi = value + self.norms.add(x, grad, hess)
        du = np.arange(2 * n)

        g_obj = -np.einsum("kn,nkj->nj", self.wrho, terms["low_g"]) / n
        c_obj = -np.einsum("kn,nk->n", self.wrho, terms["low_c"]) / n  # >= 0
        grad[du] += t * g_obj.reshape(-1)
        hess[du, du] += t * np.repeat(c_obj, 2)

        # gradients of the raw floor/causality functions with respect to u
        rows = np.empty((k + n - 1, 2 * n))
        rows[:k] = (np.einsum("kn,nkj->knj", self.rho, terms["low_g"]) / n).reshape(k, -1)
        caus = self.tri_r[:, :, None] * terms["up_g"][None] - self.tri_t[:, :, None] * terms["dn_g"][None]
        rows[k:] = caus.reshape(n - 1, -1)
        d1 = 1.0 / shifted  # minus the derivative of the eliminated term
        d2 = 1.0 / (shifted**2 + slack**2)
        grad[du] -= rows.T @ d1
        hess[: 2 * n, : 2 * n] += (rows.T * d2) @ rows

        # curvature of the raw functions, weighted by d1 (PSD after the sign flip)
        curv_floor = -np.einsum("k,kn,nk->n", d1[:k], self.rho, terms["low_c"]) / n
        suffix = np.concatenate([np.cumsum(d1[k:][::-1])[::-1], [0.0]])  # suffix[i] = sum_{j>=i}
        w_up = suffix[:n]
        w_dn = np.concatenate([[0.0], suffix[: n - 1]])
        hess[du, du] += np.repeat(curv_floor - w_up * terms["up_c"], 2) + (w_dn[:, None] * terms["dn_h"]).reshape(-1)
        return phi, grad, hess


def plan_to_vector(plan: TrajectoryPlan) -> np.ndarray:
    return np.concatenate([plan.positions.reshape(-1), plan.velocities.reshape(-1),
                           plan.accelerations.reshape(-1)])


def vector_to_plan(x: np.ndarray, n: int) -> TrajectoryPlan:
    return TrajectoryPlan(x[: 2 * n].reshape(n, 2), x[2 * n : 4 * n].reshape(n, 2),
                          x[4 * n : 6 * n].reshape(n, 2))


def surrogate_objective_and_gradient(scenario: Scenario, model: sg.SurrogateModel, assoc, plan: TrajectoryPlan):
    """Surrogate weighted sum rate and its gradient.

    The gradient has shape ``(3, N, 2)``: positions, velocities,
    accelerations (only the position block is nonzero).
    """
    rho = np.asarray(assoc, dtype=float)
    low, low_g, _ = sg.user_lower_all(model, scenario, plan.positions)
    wrho = scenario.weights[:, None] * rho
    n = scenario.num_slots
    value = float(np.sum(wrho.T * low) / n)
    grad = np.zeros((3, n, 2))
    grad[0] = np.einsum("kn,nkj->nj", wrho, low_g) / n
    return value, grad


def _interior(scenario: Scenario, plan: TrajectoryPlan, shrink: float = 1e-6) -> TrajectoryPlan:
    """Pull a plan slightly toward hover until every norm bound holds strictly."""
    u0 = scenario.start_point
    factor = 1.0
    for _ in range(60):
        du = plan.positions - u0
        cand = TrajectoryPlan(u0 + factor * du, factor * plan.velocities, factor * plan.accelerations)
        disp = np.linalg.norm(np.diff(cand.positions, axis=0), axis=1)
        if (np.all(np.linalg.norm(cand.velocities, axis=1) < scenario.v_max)
                and np.all(np.linalg.norm(cand.accelerations, axis=1) < scenario.a_max)
                and np.all(disp < scenario.v_max * scenario.slot_len)):
            return cand
        factor *= 1.0 - shrink
        shrink *= 4.0
    return hover_plan(scenario)


def solve(scenario: Scenario, model: sg.SurrogateModel, assoc, warm_start: TrajectoryPlan,
          options: BarrierOptions | None = None, record_trace: bool = False) -> MobilitySolution:
    """Maximize the surrogate weighted sum rate for a fixed association.

    Returns status ``"optimal"`` when every floor and causality slack is
    below ``EPS_FEAS``, otherwise ``"surrogate-infeasible"`` with
    ``violated`` naming the first constraint family that needed slack.
    """
    rho = check_association(scenario, assoc)
    if not warm_start.is_finite():
        raise ValueError("warm start contains non-finite values")
    if not audit_plan(scenario, warm_start).feasible:
        warm_start = feasibility_restore(scenario, rho, warm_start)
    start = _interior(scenario, warm_start)

    m = slot_user_rates(scenario, model.expansion)
    penalty = 1e3 * max(float(m.max()), 1.0)
    prob = MobilityProblem(scenario, model, rho, penalty)

    res = minimize(prob, plan_to_vector(start), options, record_trace=record_trace)
    x = res.x
    plan = vector_to_plan(x, prob.n)
    terms = prob.surrogate_terms(x)
    floor_slack = np.maximum(0.0, -prob.floor_terms(terms))
    caus_slack = np.maximum(0.0, -prob.causality_terms(terms))
    violated = None
    if floor_slack.max(initial=0.0) > EPS_FEAS:
        violated = "rate_floor"
    elif caus_slack.max(initial=0.0) > EPS_FEAS:
        violated = "causality"
    status = "optimal" if violated is None else "surrogate-infeasible"
    report = {
        "floor_violation": float(floor_slack.max(initial=0.0)),
        "causality_violation": float(caus_slack.max(initial=0.0)),
        "floor_margin": prob.floor_terms(terms),
        "causality_margin": prob.causality_terms(terms),
        "primal_residual": res.primal_residual,
        "gap": res.gap,
    }
    iters = {"stages": res.stages, "newton": res.newton_steps, "stalled": res.stalled_stages}
    log.debug("mobility solve: %s, %d stages, %d Newton steps", status, res.stages, res.newton_steps)
    return MobilitySolution(plan, prob.objective_value(x, terms), status, violated, report, iters,
                            res.kkt_residual, res.trace)


def feasibility_restore(scenario: Scenario, assoc, plan: TrajectoryPlan) -> TrajectoryPlan:
    """Nearest mobility-feasible plan (in a least-squares sense).

    Fits the initial velocity and accelerations to the given positions,
    velocities and accelerations under the exact kinematics and the
    return-to-start constraint, then scales the motion about the start
    point into the speed, acceleration and per-slot displacement bounds.
    ``assoc`` is accepted for interface symmetry and not used.
    """
    n = scenario.num_slots
    if plan.num_slots != n:
        raise ValueError(f"plan has {plan.num_slots} slots, scenario has {n}")
    if not plan.is_finite():
        raise ValueError("plan contains non-finite values")
    dt = scenario.slot_len
    u0 = scenario.start_point

    # unknowns z = [v1, a_1 .. a_{N-1}] per coordinate
    nz = n
    pos_map = np.zeros((n, nz))  # u[i] - u0 = pos_map[i] @ z
    vel_map = np.zeros((n, nz))
    for i in range(n):
        pos_map[i, 0] = i * dt
        vel_map[i, 0] = 1.0
        for j in range(i):
            pos_map[i, 1 + j] = dt * dt * (i - j - 0.5)
            vel_map[i, 1 + j] = dt
    acc_map = np.zeros((n - 1, nz))
    acc_map[np.arange(n - 1), 1 + np.arange(n - 1)] = 1.0

    design = np.vstack([pos_map[1:-1], dt * vel_map, dt * dt * acc_map])
    z_all = np.zeros((nz, 2))
    for c in range(2):
        target = np.concatenate([plan.positions[1:-1, c] - u0[c], dt * plan.velocities[:, c],
                                 dt * dt * plan.accelerations[:-1, c]])
        # equality-constrained least squares via the KKT system
        kkt = np.zeros((nz + 1, nz + 1))
        kkt[:nz, :nz] = design.T @ design
        kkt[:nz, nz] = pos_map[-1]
        kkt[nz, :nz] = pos_map[-1]
        rhs = np.concatenate([design.T @ target, [0.0]])
        z_all[:, c] = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:nz]
    rel = pos_map @ z_all
    vel = vel_map @ z_all
    acc = np.vstack([z_all[1:], np.zeros((1, 2))])
    rel[0] = 0.0
    rel[-1] = 0.0

    speed = np.linalg.norm(vel, axis=1).max()
    accel = np.linalg.norm(acc, axis=1).max()
    disp = np.linalg.norm(np.diff(rel, axis=0), axis=1).max()
    factor = min(1.0,
                 scenario.v_max / speed if speed > 0 else np.inf,
                 scenario.a_max / accel if accel > 0 else np.inf,
                 scenario.v_max * dt / disp if disp > 0 else np.inf)
    a_last = np.asarray(plan.accelerations[-1], dtype=float)
    norm_last = np.linalg.norm(a_last)
    if norm_last > scenario.a_max:
        a_last = a_last * scenario.a_max / norm_last
    acc = factor * acc
    acc[-1] = a_last
    restored = TrajectoryPlan(u0 + factor * rel, factor * vel, acc)
    if not audit_plan(scenario, restored).feasible:
        raise InfeasibleScenarioError("could not restore a mobility-feasible plan")
    return restored


def write_trace(trace: list, path) -> None:
    """Per-Newton-step trace as CSV."""
    fields = ["stage", "t", "newton", "barrier", "step", "decrement"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in trace:
            writer.writerow([rec["stage"], f"{rec['t']:.12g}", rec["newton"], f"{rec['barrier']:.12g}",
                             f"{rec['step']:.12g}", f"{rec['decrement']:.12g}"])
