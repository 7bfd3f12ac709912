"""Benchmark trajectories and association policies, plus exhaustive oracles."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import association, immua, mobility
from . import surrogate as sg
from .barrier import BarrierOptions, minimize
from .scenario import (Scenario, TrajectoryPlan, association_from_labels, association_labels,
                       hover_plan, slot_user_rates)

log = logging.getLogger(__name__)


def static_trajectory(scenario: Scenario) -> TrajectoryPlan:
    """Hover at the start point for the whole period."""
    return hover_plan(scenario)


# circles ----------------------------------------------------------------------

def _arc_step(radius: float, v_max: float, a_max: float, dt: float) -> float:
    """Largest per-slot turning angle of a uniform discrete orbit within the speed and acceleration bounds.

    A uniform orbit sampled at the vertices of a regular polygon has
    vertex speed ``2 r tan(theta/2) / dt`` and centripetal acceleration
    ``2 V sin(theta/2) / dt``.
    """
    theta_v = 2.0 * np.arctan(v_max * dt / (2.0 * radius))

    def accel(theta):
        speed = 2.0 * radius * np.tan(theta / 2.0) / dt
        return 2.0 * speed * np.sin(theta / 2.0) / dt

    if accel(theta_v) <= a_max:
        return float(theta_v)
    lo, hi = 0.0, theta_v
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if accel(mid) <= a_max else (lo, mid)
    return float(lo)


def _trapezoid(distance: float, v_max: float, a_max: float):
    """Rest-to-rest straight move: duration and a function giving distance covered at time t."""
    t_acc = v_max / a_max
    if a_max * t_acc**2 >= distance:  # never reaches cruise speed
        t_acc = np.sqrt(distance / a_max)
        v_top = a_max * t_acc
        t_cruise = 0.0
    else:
        v_top = v_max
        t_cruise = (distance - a_max * t_acc**2) / v_max
    total = 2.0 * t_acc + t_cruise

    def covered(t):
        t = np.clip(t, 0.0, total)
        d1 = 0.5 * a_max * np.minimum(t, t_acc) ** 2
        d2 = v_top * np.clip(t - t_acc, 0.0, t_cruise)
        tail = np.clip(t - t_acc - t_cruise, 0.0, t_acc)
        d3 = v_top * tail - 0.5 * a_max * tail**2
        return d1 + d2 + d3

    return total, covered


def circle_reference(scenario: Scenario, radius: float, heading: float | None = None) -> np.ndarray:
    """Reference positions: radial ramp out, clockwise orbit around the start point, radial ramp back.

    ``heading`` is the angle of the ramp; by default it points at the CEU
    nearest to the start point.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    n, dt = scenario.num_slots, scenario.slot_len
    c = scenario.start_point
    if heading is None:
        d = scenario.ceu_positions - c
        k = int(np.argmin(np.linalg.norm(d, axis=1)))
        heading = float(np.arctan2(d[k, 1], d[k, 0])) if np.linalg.norm(d[k]) > 0 else 0.0
    horizon = (n - 1) * dt
    t_ramp, ramp = _trapezoid(radius, scenario.v_max, scenario.a_max)
    if 2.0 * t_ramp > horizon:
        # not enough time to reach the circle: go out as far as the horizon allows and return
        reach = radius
        for _ in range(60):
            reach *= 0.9
            t_ramp, ramp = _trapezoid(reach, scenario.v_max, scenario.a_max)
            if 2.0 * t_ramp <= horizon:
                break
    omega = _arc_step(radius, scenario.v_max, scenario.a_max, dt) / dt
    t_arc = max(horizon - 2.0 * t_ramp, 0.0)
    # arc length whose rest-to-rest profile at the orbit speed fills the time left
    v_top = omega * radius
    if t_arc >= 2.0 * v_top / scenario.a_max:
        length = v_top * (t_arc - v_top / scenario.a_max)
    else:
        length = scenario.a_max * (0.5 * t_arc) ** 2
    _, orbit = _trapezoid(max(length, 1e-9), v_top, scenario.a_max)
    times = np.arange(n) * dt
    out = np.empty((n, 2))
    for i, t in enumerate(times):
        if t <= t_ramp:
            r, ang = float(ramp(t)), heading
        elif t < horizon - t_ramp:
            r = radius
            ang = heading - orbit(t - t_ramp) / radius
        else:
            r = float(ramp(horizon - t))
            ang = heading - orbit(t_arc) / radius
        out[i] = c + r * np.array([np.cos(ang), np.sin(ang)])
    out[0] = out[-1] = c
    return out


class _TrackingProblem:
    """Closest mobility-feasible trajectory to a reference path (least squares in positions)."""

    def __init__(self, scenario: Scenario, reference: np.ndarray):
        n = scenario.num_slots
        self.n = n
        self.size = 6 * n
        self.A, self.b = mobility.kinematic_equalities(scenario, self.size)
        self.norms = mobility._NormBarrier(scenario)
        self.n_ineq = self.norms.count
        self.ref = reference.reshape(-1)
        step = max(scenario.v_max * scenario.slot_len, 1.0)
        self.weight = 1.0 / (step**2 * n)
        self.scale = np.concatenate([np.full(2 * n, step), np.full(2 * n, scenario.v_max),
                                     np.full(2 * n, scenario.a_max)])

    def margins(self, x):
        return self.norms.margins(x)

    def barrier(self, x, t, derivatives):
        r = x[: 2 * self.n] - self.ref
        value = t * self.weight * float(r @ r)
        if not derivatives:
            m = self.norms.margins(x)
            if np.any(m <= 0):
                return np.inf
            return value - np.sum(np.log(m))
        grad = np.zeros(self.size)
        hess = np.zeros((self.size, self.size))
        phi = value + self.norms.add(x, grad, hess)
        grad[: 2 * self.n] += 2.0 * t * self.weight * r
        idx = np.arange(2 * self.n)
        hess[idx, idx] += 2.0 * t * self.weight
        return phi, grad, hess


def track_reference(scenario: Scenario, reference, options: BarrierOptions | None = None) -> TrajectoryPlan:
    """Mobility-feasible plan closest to ``reference`` positions, from a hover start."""
    ref = np.asarray(reference, dtype=float)
    if ref.shape != (scenario.num_slots, 2) or not np.all(np.isfinite(ref)):
        raise ValueError("reference must be a finite (N, 2) array")
    prob = _TrackingProblem(scenario, ref)
    res = minimize(prob, mobility.plan_to_vector(hover_plan(scenario)), options)
    return mobility.vector_to_plan(res.x, scenario.num_slots)


def circle_trajectory(scenario: Scenario, radius: float) -> TrajectoryPlan:
    """Clockwise orbit of the given radius around the start point, entered and left by radial ramps."""
    return track_reference(scenario, circle_reference(scenario, radius))


# fixed association policies -------------------------------------------------------

def repair_causality(scenario: Scenario, plan: TrajectoryPlan, assoc) -> np.ndarray:
    """Idle the earliest slot whose delivery overdraws the buffer until every prefix is covered."""
    rates = slot_user_rates(scenario, plan.positions)
    uplink = association.slot_uplink(scenario, plan)
    labels = association_labels(assoc).copy()
    labels[0] = -1
    received = np.cumsum(uplink)[:-1]
    cols = np.arange(scenario.num_slots)
    m_pad = np.vstack([rates, np.zeros((1, scenario.num_slots))])
    for _ in range(scenario.num_slots):
        down = m_pad[labels, cols]
        down[0] = 0.0
        slack = received - np.cumsum(down[1:])
        bad = np.nonzero(slack < -association.CAUSALITY_TOL)[0]
        if bad.size == 0:
            break
        # the first negative prefix is caused by the slot that closes it
        labels[bad[0] + 1] = -1
    return association_from_labels(scenario, labels)


def random_association(scenario: Scenario, plan: TrajectoryPlan, seed) -> np.ndarray:
    """One uniformly random CEU per slot from slot 2 on, repaired for causality."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, scenario.num_ceus, size=scenario.num_slots)
    labels[0] = -1
    return repair_causality(scenario, plan, association_from_labels(scenario, labels))


def clockwise_order(scenario: Scenario) -> np.ndarray:
    """CEU indices in clockwise order around their centroid, starting from CEU 1."""
    d = scenario.ceu_positions - scenario.ceu_positions.mean(axis=0)
    ang = np.arctan2(d[:, 1], d[:, 0])
    order = np.lexsort((np.arange(scenario.num_ceus), -ang))
    return np.roll(order, -int(np.nonzero(order == 0)[0][0]))


def clockwise_association(scenario: Scenario, plan: TrajectoryPlan) -> np.ndarray:
    """Serve CEUs one after another in clockwise order, in contiguous blocks of near-equal length."""
    order = clockwise_order(scenario)
    labels = np.full(scenario.num_slots, -1)
    for k, block in zip(order, np.array_split(np.arange(1, scenario.num_slots), scenario.num_ceus)):
        labels[block] = k
    return repair_causality(scenario, plan, association_from_labels(scenario, labels))


# exhaustive oracle -----------------------------------------------------------------

@dataclass
class BruteForceResult:
    assoc: np.ndarray | None
    value: float
    feasible_count: int

    @property
    def feasible(self) -> bool:
        return self.assoc is not None


MAX_PATTERNS = 1 << 20


def brute_force_association(scenario: Scenario, plan: TrajectoryPlan | None = None, rates=None,
                            uplink=None, chunk: int = 1 << 15) -> BruteForceResult:
    """Exhaustive search over every per-slot choice (idle or one CEU) for slots 2..N.

    Patterns are enumerated in lexicographic order of labels (idle first,
    then CEU 1, 2, ...), and the first maximizer wins ties.
    """
    k, n = scenario.num_ceus, scenario.num_slots
    if (k + 1) ** (n - 1) > MAX_PATTERNS:
        raise ValueError(f"{(k + 1) ** (n - 1)} patterns exceed the limit of {MAX_PATTERNS}")
    if rates is None:
        rates = slot_user_rates(scenario, plan.positions)
    if uplink is None:
        uplink = association.slot_uplink(scenario, plan)
    rates = np.asarray(rates, dtype=float)
    received = np.cumsum(uplink)[:-1]
    m_pad = np.vstack([rates, np.zeros((1, n))])
    choices = np.arange(-1, k)
    best_val, best_lab, count = -np.inf, None, 0
    it = itertools.product(choices, repeat=n - 1)
    while True:
        block = np.array(list(itertools.islice(it, chunk)), dtype=int).reshape(-1, n - 1)
        if block.shape[0] == 0:
            break
        labels = np.hstack([np.full((block.shape[0], 1), -1), block])
        down = m_pad[labels, np.arange(n)]
        down[:, 0] = 0.0
        slack = received[None, :] - np.cumsum(down[:, 1:], axis=1)
        per_user = np.stack([np.where(labels == j, down, 0.0).sum(axis=1) for j in range(k)], axis=1) / n
        ok = np.all(slack >= -association.CAUSALITY_TOL, axis=1)
        ok &= np.all(per_user >= scenario.rate_floor - association.FLOOR_TOL, axis=1)
        count += int(ok.sum())
        if ok.any():
            values = np.where(ok, per_user @ scenario.weights, -np.inf)
            i = int(np.argmax(values))
            if values[i] > best_val:
                best_val, best_lab = float(values[i]), labels[i]
        if n == 1:
            break
    assoc = None if best_lab is None else association_from_labels(scenario, best_lab)
    return BruteForceResult(assoc, best_val, count)


# benchmark evaluation ---------------------------------------------------------------

@dataclass
class BaselineResult:
    name: str
    plan: TrajectoryPlan
    assoc: np.ndarray
    objective: float
    feasible: bool


def evaluate_trajectory(scenario: Scenario, name: str, plan: TrajectoryPlan) -> BaselineResult:
    """Fixed trajectory with the association optimized for it."""
    sol = association.solve(scenario, plan)
    obj = immua.exact_objective(scenario, plan, sol.assoc)
    return BaselineResult(name, plan, sol.assoc, obj, sol.primal_feasible)


def optimize_for_association(scenario: Scenario, assoc, plan: TrajectoryPlan | None = None,
                             max_outer: int = 30, tol: float = 1e-4,
                             options: BarrierOptions | None = None) -> TrajectoryPlan:
    """Trajectory optimized for a fixed association by repeated surrogate solves."""
    plan = plan or hover_plan(scenario)
    obj = immua.exact_objective(scenario, plan, assoc)
    for _ in range(max_outer):
        sol = mobility.solve(scenario, sg.build(scenario, plan), assoc, plan, options=options)
        if not sol.surrogate_feasible:
            break
        new_obj = immua.exact_objective(scenario, sol.plan, assoc)
        if new_obj < obj - 1e-12 or not immua.is_jointly_feasible(scenario, sol.plan, assoc):
            break
        change = (new_obj - obj) / max(abs(obj), 1e-12)
        plan, obj = sol.plan, new_obj
        if change < tol:
            break
    return plan


def evaluate_association(scenario: Scenario, name: str, assoc) -> BaselineResult:
    """Fixed association with the trajectory optimized for it."""
    plan = optimize_for_association(scenario, assoc)
    obj = immua.exact_objective(scenario, plan, assoc)
    return BaselineResult(name, plan, assoc, obj, immua.is_jointly_feasible(scenario, plan, assoc))


def benchmark(scenario: Scenario, radii=(200.0, 500.0, 800.0), seed: int = 0) -> list:
    """Static, circle, random and clockwise baselines on one scenario."""
    hover = hover_plan(scenario)
    out = [evaluate_trajectory(scenario, "static", static_trajectory(scenario))]
    for r in radii:
        out.append(evaluate_trajectory(scenario, f"circle_{r:g}", circle_trajectory(scenario, r)))
    out.append(evaluate_association(scenario, "random_association", random_association(scenario, hover, seed)))
    out.append(evaluate_association(scenario, "clockwise_association", clockwise_association(scenario, hover)))
    return out


# multi-start -------------------------------------------------------------------------

def random_start(scenario: Scenario, rng: np.random.Generator):
    """Random feasible (plan, association): a restored random walk and a random association on it."""
    n = scenario.num_slots
    step = scenario.v_max * scenario.slot_len
    walk = scenario.start_point + np.cumsum(rng.normal(0.0, 0.5 * step, (n, 2)), axis=0)
    raw = TrajectoryPlan(walk, rng.normal(0.0, 0.5 * scenario.v_max, (n, 2)),
                         rng.normal(0.0, 0.5 * scenario.a_max, (n, 2)))
    plan = mobility.feasibility_restore(scenario, None, raw)
    assoc = random_association(scenario, plan, rng.integers(1 << 62))
    if not immua.is_jointly_feasible(scenario, plan, assoc):
        sol = association.solve(scenario, plan, incumbent=assoc)
        if not sol.primal_feasible:
            return None
        assoc = sol.assoc
    return plan, assoc


def _run_start(args):
    scenario, config, init = args
    try:
        return immua.run(scenario, config, init=init)
    except mobility.InfeasibleScenarioError:
        return None


def multi_start(scenario: Scenario, config: immua.ImmuaConfig | None = None, num_starts: int = 100,
                seed: int = 0, workers: int = 1):
    """Best IMMUA result over ``num_starts`` starts; start 0 is the default initialization.

    Returns ``(best, objectives)`` where ``objectives[i]`` is the final
    objective of start ``i`` (``nan`` when no feasible start was drawn).
    Ties go to the lowest start index.
    """
    rng = np.random.default_rng(seed)
    inits = [None]
    for _ in range(num_starts - 1):
        for _attempt in range(20):
            start = random_start(scenario, rng)
            if start is not None:
                break
        inits.append(start if start is not None else "skip")
    jobs = [(scenario, config, init) for init in inits if not isinstance(init, str)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_start, jobs))
    else:
        done = [_run_start(job) for job in jobs]
    results = iter(done)
    objectives, best, best_val = [], None, -np.inf
    for init in inits:
        res = None if isinstance(init, str) else next(results)
        val = res.objective if res is not None else np.nan
        objectives.append(val)
        if res is not None and val > best_val:
            best, best_val = res, val
    return best, objectives
