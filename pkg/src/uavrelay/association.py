"""CEU association for a fixed trajectory by Lagrangian dual decomposition.

With the trajectory fixed, the association problem is an integer linear
program. Dualizing the buffer-causality and rate-floor constraints makes
the inner maximization separable per slot: each slot serves the CEU with
the largest positive coefficient or stays idle. A projected subgradient
method drives the multipliers, and every distinct inner maximizer is
repaired into an exactly feasible association and polished by a local
search; the best one found is returned.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .scenario import (Scenario, TrajectoryPlan, association_from_labels, association_labels,
                       check_association, slot_user_rates, uplink_rate)

log = logging.getLogger(__name__)

# absolute slack allowed when checking the exact constraints on a candidate
CAUSALITY_TOL = 1e-9
FLOOR_TOL = 1e-12


@dataclass
class DualState:
    """Multipliers of the causality (slots 2..N) and rate-floor constraints."""

    lam: np.ndarray
    eta: np.ndarray
    step_index: int = 1
    step_size: float = 0.0

    @classmethod
    def zeros(cls, scenario: Scenario, step0: float = 0.0) -> "DualState":
        return cls(np.zeros(scenario.num_slots - 1), np.zeros(scenario.num_ceus), 1, step0)


@dataclass
class AssociationSolution:
    assoc: np.ndarray
    dual_value: float
    primal_value: float
    primal_feasible: bool
    iterations: int
    dual: DualState | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.dual_value - self.primal_value


def slot_uplink(scenario: Scenario, plan: TrajectoryPlan) -> np.ndarray:
    """Uplink rate per slot, with the last slot's uplink unused (zero)."""
    up = np.array(uplink_rate(scenario, plan.positions), dtype=float)
    up[-1] = 0.0
    return up


def _check_rates(scenario: Scenario, rates, uplink=None):
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (scenario.num_ceus, scenario.num_slots):
        raise ValueError(f"rates must have shape {(scenario.num_ceus, scenario.num_slots)}")
    if not np.all(np.isfinite(rates)):
        raise ValueError("rates contain non-finite values")
    if uplink is not None:
        uplink = np.asarray(uplink, dtype=float)
        if uplink.shape != (scenario.num_slots,) or not np.all(np.isfinite(uplink)):
            raise ValueError("uplink must be a finite array with one entry per slot")
    return rates, uplink


def coefficients(scenario: Scenario, rates, dual: DualState) -> np.ndarray:
    """Per-(CEU, slot) Lagrangian coefficients; column 0 is unused."""
    n = scenario.num_slots
    # slot p (0-based, p >= 1) appears in every causality constraint from p onward
    lam_tail = np.concatenate([[0.0], np.cumsum(dual.lam[::-1])[::-1]])
    coef = rates * ((scenario.weights + dual.eta)[:, None] / n - lam_tail[None, :])
    coef[:, 0] = 0.0
    return coef


def inner_maximize(scenario: Scenario, rates, dual: DualState) -> np.ndarray:
    """Integer maximizer of the Lagrangian; ties go to the lowest CEU index."""
    rates, _ = _check_rates(scenario, rates)
    return association_from_labels(scenario, _inner_labels(coefficients(scenario, rates, dual)))


def _inner_labels(coef):
    best = np.argmax(coef, axis=0)
    labels = np.where(coef[best, np.arange(coef.shape[1])] > 0, best, -1)
    labels[0] = -1
    return labels


def dual_value(scenario: Scenario, rates, uplink, dual: DualState) -> float:
    coef = coefficients(scenario, rates, dual)
    inner = np.maximum(coef[:, 1:].max(axis=0), 0.0).sum()
    received = np.cumsum(uplink)[:-1]
    return float(inner + dual.lam @ received - dual.eta @ scenario.rate_floor)


def subgradient_step(scenario: Scenario, rates, uplink, assoc, dual: DualState,
                     step0: float | None = None) -> DualState:
    """One projected subgradient step with the diminishing step ``step0 / sqrt(t)``."""
    rates, uplink = _check_rates(scenario, rates, uplink)
    rho = np.asarray(assoc, dtype=float)
    if step0 is None:
        step0 = 1.0 / max(float(rates.max()), 1e-12)
    step = step0 / np.sqrt(dual.step_index)
    down = np.sum(rho * rates, axis=0)
    slack = np.cumsum(uplink)[:-1] - np.cumsum(down[1:])
    per_user = np.sum(rho[:, 1:] * rates[:, 1:], axis=1) / scenario.num_slots
    lam = np.maximum(dual.lam - step * slack, 0.0)
    eta = np.maximum(dual.eta - step * (per_user - scenario.rate_floor), 0.0)
    return DualState(lam, eta, dual.step_index + 1, step)


def _step(ev, rates, uplink, labels, dual, step0, scenario):
    """Subgradient step on label vectors (same update as :func:`subgradient_step`)."""
    step = step0 / np.sqrt(dual.step_index)
    slack, per_user = ev.state(labels)
    lam = np.maximum(dual.lam - step * slack, 0.0)
    eta = np.maximum(dual.eta - step * (per_user - scenario.rate_floor), 0.0)
    return DualState(lam, eta, dual.step_index + 1, step)


class _Evaluator:
    """Exact objective and constraint checks on label vectors."""

    def __init__(self, scenario: Scenario, rates, uplink):
        self.k, self.n = rates.shape
        # last row is the idle "rate", so label -1 indexes zeros
        self.m_pad = np.vstack([rates, np.zeros((1, self.n))])
        self.w_pad = np.concatenate([scenario.weights, [0.0]])
        self.floors = scenario.rate_floor
        self.received = np.cumsum(uplink)[:-1]
        self.cols = np.arange(self.n)

    def downlink(self, labels):
        down = self.m_pad[labels, self.cols]
        down[0] = 0.0
        return down

    def state(self, labels):
        down = self.downlink(labels)
        slack = self.received - np.cumsum(down[1:])
        served = labels >= 0
        per_user = np.bincount(labels[served], weights=down[served], minlength=self.k) / self.n
        return slack, per_user

    def value(self, labels) -> float:
        _, per_user = self.state(labels)
        return float(self.w_pad[:-1] @ per_user)

    def feasible(self, labels) -> bool:
        slack, per_user = self.state(labels)
        return bool(slack.min(initial=0.0) >= -CAUSALITY_TOL and np.all(per_user >= self.floors - FLOOR_TOL))

    # repair and local search -----------------------------------------------
    def repair_causality(self, labels):
        labels = labels.copy()
        labels[0] = -1
        for _ in range(self.n):
            slack, _ = self.state(labels)
            bad = np.nonzero(slack < -CAUSALITY_TOL)[0]
            if bad.size == 0:
                break
            last = bad[0] + 1  # constraint j covers downlink of slots 1..j+1
            served = np.nonzero(labels[1 : last + 1] >= 0)[0] + 1
            loss = self.w_pad[labels[served]] * self.m_pad[labels[served], served]
            labels[served[np.argmin(loss)]] = -1
        return labels

    def _suffix_min(self, slack):
        return np.minimum.accumulate(slack[::-1])[::-1]

    def _moves(self, labels):
        """Objective change and feasibility of every single-slot relabel."""
        slack, per_user = self.state(labels)
        suff = self._suffix_min(slack)  # slot p touches constraints p-1 onward
        p = np.arange(1, self.n)
        old = labels[p]
        m_old = self.m_pad[old, p]
        cand = np.arange(-1, self.k)
        m_new = self.m_pad[cand][:, p]  # (K+1, N-1)
        d = m_new - m_old[None, :]
        ok = d <= suff[p - 1][None, :] + CAUSALITY_TOL
        # the previous user keeps its floor
        old_after = np.where(old >= 0, per_user[np.maximum(old, 0)] - m_old / self.n, np.inf)
        old_floor = np.where(old >= 0, self.floors[np.maximum(old, 0)], -np.inf)
        keep = (old_after >= old_floor - FLOOR_TOL)[None, :] | (cand[:, None] == old[None, :])
        ok &= keep
        gain = (self.w_pad[cand][:, None] * m_new - (self.w_pad[old] * m_old)[None, :]) / self.n
        return cand, p, gain, ok, per_user

    def repair_floors(self, labels):
        labels = labels.copy()
        for _ in range(self.n * self.k):
            _, per_user = self.state(labels)
            deficit = self.floors - per_user
            if np.all(deficit <= FLOOR_TOL):
                return labels, True
            k = int(np.argmax(deficit))
            cand, p, gain, ok, _ = self._moves(labels)
            row = k + 1
            mask = ok[row] & (labels[p] != k)
            if not mask.any():
                return labels, False
            # largest rate toward the short user, least objective loss on ties
            score = np.where(mask, self.m_pad[k, p], -np.inf)
            best = np.flatnonzero(score == score.max())
            pick = best[np.argmax(gain[row, best])]
            labels[p[pick]] = k
        _, per_user = self.state(labels)
        return labels, bool(np.all(per_user >= self.floors - FLOOR_TOL))

    def deficit(self, labels) -> float:
        _, per_user = self.state(labels)
        return float(np.maximum(self.floors - per_user - FLOOR_TOL, 0.0).sum())

    def _range_min(self, slack):
        m = slack.size
        out = np.full((m + 1, m + 1), np.inf)
        for a in range(m):
            out[a, a + 1 :] = np.minimum.accumulate(slack[a:])
        return out

    def local_search(self, labels, max_rounds: int | None = None):
        """Best-improvement search over all relabelings of one or two slots.

        Moves must keep causality; they are ranked first by the total floor
        shortfall and then by the objective, so the search also repairs
        floors. Swaps and single relabels are special cases of the move set.
        """
        labels = labels.copy()
        n, k = self.n, self.k
        iu, ju = np.triu_indices(n - 1, k=1)
        p_idx, q_idx = iu + 1, ju + 1
        lab_a, lab_b = np.meshgrid(np.arange(-1, k), np.arange(-1, k), indexing="ij")
        lab_a, lab_b = lab_a.ravel(), lab_b.ravel()
        pp = np.repeat(p_idx, lab_a.size)
        qq = np.repeat(q_idx, lab_a.size)
        aa = np.tile(lab_a, p_idx.size)
        bb = np.tile(lab_b, p_idx.size)
        eye = np.vstack([np.eye(k), np.zeros((1, k))])  # label -1 -> zero row
        for _ in range(max_rounds or 20 * n):
            slack, per_user = self.state(labels)
            lp, lq = labels[pp], labels[qq]
            d_p = self.m_pad[aa, pp] - self.m_pad[lp, pp]
            d_q = self.m_pad[bb, qq] - self.m_pad[lq, qq]
            mid = self._range_min(slack)
            suff = self._suffix_min(slack)
            ok = (d_p <= mid[pp - 1, qq - 1] + CAUSALITY_TOL) & (d_p + d_q <= suff[qq - 1] + CAUSALITY_TOL)
            delta = (eye[aa] * self.m_pad[aa, pp][:, None] - eye[lp] * self.m_pad[lp, pp][:, None]
                     + eye[bb] * self.m_pad[bb, qq][:, None] - eye[lq] * self.m_pad[lq, qq][:, None]) / n
            new_user = per_user[None, :] + delta
            short = np.maximum(self.floors - new_user - FLOOR_TOL, 0.0).sum(axis=1)
            value = new_user @ self.w_pad[:-1]
            cur_short = float(np.maximum(self.floors - per_user - FLOOR_TOL, 0.0).sum())
            cur_value = float(per_user @ self.w_pad[:-1])
            better = ok & ((short < cur_short - 1e-15)
                           | ((short <= cur_short + 1e-15) & (value > cur_value + 1e-14)))
            if not better.any():
                break
            # lexicographic: smallest shortfall, then largest value
            cand = np.flatnonzero(better)
            low = cand[short[cand] <= short[cand].min() + 1e-15]
            pick = low[np.argmax(value[low])]
            labels[pp[pick]] = aa[pick]
            labels[qq[pick]] = bb[pick]
        return labels

    def forward_greedy(self, score):
        """Serve slots in order, each by the best-scoring CEU that keeps every buffer prefix nonnegative.

        ``score`` is ``(K, N)``; nonpositive scores leave the slot idle.
        """
        labels = np.full(self.n, -1)
        slack = self.received.copy()
        for p in range(1, self.n):
            budget = slack[p - 1 :].min()
            fits = self.m_pad[:-1, p] <= budget + CAUSALITY_TOL
            col = np.where(fits & (score[:, p] > 0), score[:, p], -np.inf)
            k = int(np.argmax(col))
            if np.isfinite(col[k]):
                labels[p] = k
                slack[p - 1 :] -= self.m_pad[k, p]
        return labels

    def quick_recover(self, labels):
        labels = self.repair_causality(labels)
        labels, ok = self.repair_floors(labels)
        return labels, ok and self.feasible(labels)


def solve(scenario: Scenario, plan: TrajectoryPlan, incumbent=None, max_iter: int = 5000,
          rel_tol: float = 1e-5, patience: int = 20, min_iter: int = 200, polish: int = 5, rates=None,
          uplink=None) -> AssociationSolution:
    """Best exactly-feasible association for a fixed trajectory.

    ``incumbent`` (an association matrix) is treated as one more primal
    candidate, so the result is never worse than a feasible incumbent.
    ``rates``/``uplink`` may be passed to skip recomputing them from ``plan``.
    """
    if rates is None:
        rates = slot_user_rates(scenario, plan.positions)
    if uplink is None:
        uplink = slot_uplink(scenario, plan)
    rates, uplink = _check_rates(scenario, rates, uplink)
    ev = _Evaluator(scenario, rates, uplink)
    step0 = 1.0 / max(float(rates.max()), 1e-12)
    dual = DualState.zeros(scenario, step0)

    seen: set[bytes] = set()
    feasible_pool: dict[bytes, float] = {}
    short_pool: dict[bytes, float] = {}
    best_quick = -np.inf

    def consider(labels):
        nonlocal best_quick
        key = labels.tobytes()
        if key in seen:
            return
        seen.add(key)
        cand, ok = ev.quick_recover(labels)
        ckey = cand.tobytes()
        if ok:
            value = ev.value(cand)
            feasible_pool[ckey] = value
            best_quick = max(best_quick, value)
        else:
            short_pool[ckey] = ev.deficit(cand)

    inc = None
    if incumbent is not None:
        inc = association_labels(check_association(scenario, incumbent))
        consider(inc)

    best_dual = np.inf
    best_state = dual
    calm = 0
    it = 0
    for it in range(1, max_iter + 1):
        coef = coefficients(scenario, rates, dual)
        labels = _inner_labels(coef)
        value = float(np.maximum(coef[:, 1:].max(axis=0), 0.0).sum() + dual.lam @ ev.received
                      - dual.eta @ scenario.rate_floor)
        consider(labels)
        # stop once the running minimum of the dual has settled
        if value < best_dual - rel_tol * max(abs(best_dual), 1e-12) or not np.isfinite(best_dual):
            calm = 0
        else:
            calm += 1
        if value < best_dual:
            best_dual, best_state = value, dual
        if best_dual - best_quick <= 1e-12 * (1.0 + abs(best_dual)):
            break  # zero duality gap certifies optimality
        if calm >= patience and it >= min_iter:
            break
        dual = _step(ev, rates, uplink, labels, dual, step0, scenario)

    # causality-aware greedy constructions from the primal weights and the best multipliers
    consider(ev.forward_greedy(scenario.weights[:, None] * rates))
    consider(ev.forward_greedy(coefficients(scenario, rates, best_state)))

    # polish the most promising candidates with the two-slot local search
    starts = sorted(feasible_pool, key=feasible_pool.get, reverse=True)[:polish]
    if not starts:
        starts = sorted(short_pool, key=short_pool.get)[:polish]
    if inc is not None:
        starts.append(inc.tobytes())
    best_labels, best_value, found = None, -np.inf, False
    for key in starts:
        cand = np.frombuffer(key, dtype=int).copy()
        if best_dual - feasible_pool.get(key, -np.inf) > 1e-12 * (1.0 + abs(best_dual)):
            cand = ev.local_search(cand)
        if ev.feasible(cand):
            value = ev.value(cand)
            if value > best_value + 1e-15:
                best_labels, best_value, found = cand, value, True

    if found:
        assoc = association_from_labels(scenario, best_labels)
        primal = best_value
    else:
        assoc = association_from_labels(scenario, ev.repair_causality(_inner_labels(coefficients(scenario, rates, dual))))
        primal = ev.value(association_labels(assoc))
    slack, per_user = ev.state(association_labels(assoc))
    diag = {"min_causality_slack": float(slack.min()) if slack.size else 0.0,
            "floor_shortfall": np.maximum(scenario.rate_floor - per_user, 0.0),
            "candidates": len(seen)}
    if not found:
        log.info("association: no feasible association found after %d iterations", it)
    return AssociationSolution(assoc, float(best_dual), float(primal), found, it, dual, diag)


def write_table(scenario: Scenario, assoc, path) -> None:
    """Slot-to-CEU table; idle slots are written as ``Null`` and CEUs are 1-based."""
    labels = association_labels(check_association(scenario, assoc))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", "ceu"])
        for n, lab in enumerate(labels):
            writer.writerow([n + 1, "Null" if lab < 0 else f"CEU{lab + 1}"])
