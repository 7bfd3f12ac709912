"""Convex surrogate bounds frozen at an expansion trajectory.

The uplink rate gets a concave minorant (an even split of the MRT SNR
across GBSs followed by a tangent line in the squared distance), the
per-slot user rate gets a concave tangent minorant, and the downlink
rate gets a convex majorant that splits the squared 3D distance into
altitude, x and y thirds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scenario import LOG2E, Scenario, TrajectoryPlan, _sq_dist

# |offset| below AXIS_EPS is treated as AXIS_EPS**2 in the majorant.
AXIS_EPS = 1e-3


@dataclass(frozen=True)
class SurrogateModel:
    """Tangent coefficients per slot; ``a_r``/``b_r`` are ``(N, N_B)``, ``c_k``/``d_k`` are ``(N, K)``."""

    expansion: np.ndarray
    a_r: np.ndarray
    b_r: np.ndarray
    c_k: np.ndarray
    d_k: np.ndarray
    gbs_sq0: np.ndarray
    ceu_sq0: np.ndarray

    @property
    def num_slots(self) -> int:
        return self.expansion.shape[0]


def build(scenario: Scenario, expansion) -> SurrogateModel:
    """Coefficients of the uplink and user-rate minorants around ``expansion``.

    ``expansion`` is a :class:`TrajectoryPlan` or an ``(N, 2)`` position array.
    """
    pos = expansion.positions if isinstance(expansion, TrajectoryPlan) else np.asarray(expansion, float)
    if pos.ndim != 2 or pos.shape[1] != 2 or not np.all(np.isfinite(pos)):
        raise ValueError("expansion positions must be a finite (N, 2) array")
    h2 = scenario.altitude**2
    sigma2 = scenario.noise_power
    n_b = scenario.num_gbs

    gbs_sq0 = _sq_dist(pos, scenario.gbs_positions)
    dist_b = h2 + gbs_sq0
    q = scenario.p_gbs * scenario.ref_gain * scenario.fading_sq_norms / sigma2  # (N_B,)
    a_r = LOG2E * (q / dist_b**2) / (1.0 + n_b * q / dist_b)
    b_r = np.log2(1.0 + n_b * q / dist_b) / n_b

    ceu_sq0 = _sq_dist(pos, scenario.ceu_positions)
    dist_k = h2 + ceu_sq0
    snr_ref = scenario.p_uav * scenario.ref_gain / sigma2
    c_k = LOG2E * (snr_ref / dist_k**2) / (1.0 + snr_ref / dist_k)
    d_k = np.log2(1.0 + snr_ref / dist_k)

    frozen = []
    for arr in (pos, a_r, b_r, c_k, d_k, gbs_sq0, ceu_sq0):
        arr = np.array(arr, dtype=float)
        arr.setflags(write=False)
        frozen.append(arr)
    return SurrogateModel(*frozen)


def uplink_lower(model: SurrogateModel, scenario: Scenario, position, n: int) -> float:
    """Concave minorant of the uplink rate for slot ``n`` (0-based)."""
    d2 = _sq_dist(position, scenario.gbs_positions)
    return float(np.sum(-model.a_r[n] * (d2 - model.gbs_sq0[n]) + model.b_r[n]))


def user_rate_lower(model: SurrogateModel, scenario: Scenario, position, k: int, n: int) -> float:
    d2 = _sq_dist(position, scenario.ceu_positions[k : k + 1])[..., 0]
    return float(-model.c_k[n, k] * (d2 - model.ceu_sq0[n, k]) + model.d_k[n, k])


def _axis_term(offset, beta):
    """``log2(1 + beta / z^2)`` with the clamp, plus first and second derivative in ``z``."""
    z = np.asarray(offset, dtype=float)
    clamped = np.abs(z) < AXIS_EPS
    zz = np.where(clamped, AXIS_EPS, z)
    z2 = zz * zz
    value = np.log2(1.0 + beta / z2)
    d1 = -2.0 * beta * LOG2E / (zz * (z2 + beta))
    d2 = 2.0 * beta * LOG2E * (3.0 * z2 + beta) / (zz * (z2 + beta)) ** 2
    d1 = np.where(clamped, 0.0, d1)
    d2 = np.where(clamped, 0.0, d2)
    return value, d1, d2


def user_rate_upper_terms(scenario: Scenario, positions):
    """Majorant of every user rate at every position.

    Returns ``(value, grad, hess_diag)`` with shapes ``(..., K)``,
    ``(..., K, 2)`` and ``(..., K, 2)``; the Hessian is diagonal because the
    bound is separable in x and y.
    """
    pos = np.asarray(positions, dtype=float)
    beta = scenario.p_uav * scenario.ref_gain / (3.0 * scenario.noise_power)
    const = np.log2(1.0 + beta / scenario.altitude**2)
    off = pos[..., None, :] - scenario.ceu_positions  # (..., K, 2)
    val, d1, d2 = _axis_term(off, beta)
    value = (const + val[..., 0] + val[..., 1]) / 3.0
    return value, d1 / 3.0, d2 / 3.0


def user_rate_upper(scenario: Scenario, position, k: int) -> float:
    value, _, _ = user_rate_upper_terms(scenario, position)
    return float(np.asarray(value)[..., k])


def downlink_upper(model: SurrogateModel, scenario: Scenario, position, assoc, n: int) -> float:
    """Convex majorant of the slot-``n`` downlink rate under ``assoc``."""
    rho = np.asarray(assoc, dtype=float)[:, n]
    if not rho.any():
        return 0.0
    value, _, _ = user_rate_upper_terms(scenario, position)
    return float(rho @ value)


# Vectorized forms used by the solvers; each returns value and derivatives per slot.

def user_lower_all(model: SurrogateModel, scenario: Scenario, positions):
    """``(values (N, K), grad (N, K, 2), curvature (N, K))``; Hessian is ``-2 c I``."""
    diff = positions[:, None, :] - scenario.ceu_positions
    d2 = np.einsum("nkj,nkj->nk", diff, diff)
    values = -model.c_k * (d2 - model.ceu_sq0) + model.d_k
    grad = -2.0 * model.c_k[..., None] * diff
    return values, grad, -2.0 * model.c_k


def uplink_lower_all(model: SurrogateModel, scenario: Scenario, positions):
    """``(values (N,), grad (N, 2), curvature (N,))``; Hessian is ``curvature * I``."""
    diff = positions[:, None, :] - scenario.gbs_positions
    d2 = np.einsum("nmj,nmj->nm", diff, diff)
    values = np.sum(-model.a_r * (d2 - model.gbs_sq0) + model.b_r, axis=1)
    grad = -2.0 * np.einsum("nm,nmj->nj", model.a_r, diff)
    return values, grad, -2.0 * model.a_r.sum(axis=1)


def export_csv(model: SurrogateModel, path) -> None:
    """One row per slot with the expansion point and every coefficient."""
    n_b = model.a_r.shape[1]
    k = model.c_k.shape[1]
    header = ["n", "x", "y"]
    header += [f"a_r_{m + 1}" for m in range(n_b)] + [f"b_r_{m + 1}" for m in range(n_b)]
    header += [f"c_{j + 1}" for j in range(k)] + [f"d_{j + 1}" for j in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for n in range(model.num_slots):
            row = [n + 1, *model.expansion[n], *model.a_r[n], *model.b_r[n], *model.c_k[n], *model.d_k[n]]
            writer.writerow([row[0]] + [f"{v:.12g}" for v in row[1:]])
