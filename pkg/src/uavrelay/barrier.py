"""Equality-constrained log-barrier Newton method.

Minimizes ``F(x)`` subject to ``A x = b`` and ``g_i(x) < 0`` by centering
``t F(x) - sum log(-g_i(x))`` for an increasing sequence of ``t``. The
problem object supplies the barrier function and its derivatives; this
module only does the linear algebra, line search and stage control.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.linalg


class BarrierProblem(Protocol):
    n_ineq: int
    A: np.ndarray
    b: np.ndarray
    scale: np.ndarray

    def margins(self, x: np.ndarray) -> np.ndarray:
        """``-g_i(x)`` for every inequality (positive strictly inside)."""

    def barrier(self, x: np.ndarray, t: float, derivatives: bool):
        """``phi`` or ``(phi, grad, hess)`` of ``t F(x) - sum log(-g_i(x))``."""


@dataclass
class BarrierOptions:
    mu0: float = 10.0
    mu_factor: float = 0.1
    gap_tol: float = 1e-6
    newton_tol: float = 1e-14
    max_newton: int = 100
    armijo: float = 0.01
    backtrack: float = 0.5
    boundary_fraction: float = 0.99
    min_step: float = 1e-14
    # "nullspace" projects the Newton system onto the null space of A once per
    # problem; "kkt" factorizes the full symmetric indefinite KKT matrix
    linear_solver: str = "nullspace"


@dataclass
class BarrierResult:
    x: np.ndarray
    stages: int
    newton_steps: int
    gap: float
    kkt_residual: float
    primal_residual: float
    stalled_stages: int = 0
    trace: list = field(default_factory=list)


_MAX_NOISE_STEPS = 3


class BarrierError(RuntimeError):
    pass


def _kkt_solve(hess, grad, A, r_pri):
    n = hess.shape[0]
    p = A.shape[0]
    kkt = np.zeros((n + p, n + p))
    kkt[:n, :n] = hess
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    rhs = np.concatenate([-grad, -r_pri])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        sol = scipy.linalg.solve(kkt, rhs, assume_a="sym", check_finite=False)
    return sol[:n], sol[n:]


class _NullSpaceSolver:
    """Newton steps restricted to ``A dy = -r`` through a fixed null-space basis.

    Gives the same step as the full KKT system whenever the reduced
    Hessian is nonsingular, at the cost of one small dense solve.
    """

    def __init__(self, A):
        u, sv, vt = np.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(sv > sv[0] * max(A.shape) * np.finfo(float).eps)) if sv.size else 0
        self.Z = vt[rank:].T
        # minimum-norm particular solution of A dy = -r
        self.pinv = vt[:rank].T @ (u[:, :rank].T / sv[:rank, None])

    def __call__(self, hess, grad, r_pri):
        dy_p = -(self.pinv @ r_pri)
        hz = hess @ self.Z
        reduced = self.Z.T @ hz
        rhs = -(self.Z.T @ (grad + hess @ dy_p))
        try:
            w = scipy.linalg.cho_solve(scipy.linalg.cho_factor(reduced, check_finite=False), rhs,
                                       check_finite=False)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(reduced, rhs, rcond=None)[0]
        return dy_p + self.Z @ w


def minimize(problem: BarrierProblem, x0, options: BarrierOptions | None = None,
             record_trace: bool = False) -> BarrierResult:
    """Run the barrier method from a strictly feasible ``x0``.

    ``x0`` must satisfy every inequality strictly; the equality residual
    may be nonzero and is removed by the first full Newton step.
    """
    opts = options or BarrierOptions()
    scale = np.asarray(problem.scale, dtype=float)
    A = np.asarray(problem.A, dtype=float)
    b = np.asarray(problem.b, dtype=float)
    A_s = A * scale
    # equality residual tolerance relative to the size of the right-hand side
    pri_tol = 1e-10 * (1.0 + float(np.max(np.abs(b), initial=0.0)))
    if opts.linear_solver == "nullspace":
        nullspace = _NullSpaceSolver(A_s)
    elif opts.linear_solver == "kkt":
        nullspace = None
    else:
        raise ValueError(f"unknown linear_solver {opts.linear_solver!r}")

    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("starting point must be finite")
    if np.any(problem.margins(x) <= 0):
        raise BarrierError("starting point is not strictly feasible")

    t = 1.0 / opts.mu0
    m = max(problem.n_ineq, 1)
    stages = 0
    newton_total = 0
    stalled = 0
    trace = []
    while True:
        stages += 1
        converged = False
        noise_steps = 0
        for it in range(opts.max_newton):
            phi, grad, hess = problem.barrier(x, t, True)
            g_s = grad * scale
            h_s = hess * np.outer(scale, scale)
            r_pri = A @ x - b
            if nullspace is None:
                dy, _ = _kkt_solve(h_s, g_s, A_s, r_pri)
            else:
                dy = nullspace(h_s, g_s, r_pri)
            dx = dy * scale
            slope = float(g_s @ dy)
            decrement = max(-slope, 0.0)
            if decrement / 2.0 <= opts.newton_tol and np.max(np.abs(r_pri), initial=0.0) <= pri_tol:
                converged = True
                break
            margins = problem.margins(x)
            # a decrease this small is below the rounding noise of phi: take the
            # full Newton step if phi does not rise beyond that noise, a few times per stage
            noise = 64.0 * np.finfo(float).eps * abs(phi)
            at_noise = decrement / 2.0 <= noise
            if at_noise:
                noise_steps += 1
            alpha = 1.0
            accepted = False
            while alpha >= opts.min_step:
                x_new = x + alpha * dx
                new_margins = problem.margins(x_new)
                if np.all(new_margins >= (1.0 - opts.boundary_fraction) * margins):
                    phi_new = problem.barrier(x_new, t, False)
                    allowed = noise if at_noise else opts.armijo * alpha * slope
                    if math.isfinite(phi_new) and phi_new <= phi + allowed:
                        accepted = noise_steps <= _MAX_NOISE_STEPS
                        break
                if at_noise:
                    break
                alpha *= opts.backtrack
            newton_total += 1
            if record_trace:
                trace.append({"stage": stages, "t": t, "newton": it + 1, "barrier": phi,
                              "step": alpha if accepted else 0.0, "decrement": decrement})
            if not accepted:
                # no descent possible at working precision; the point is centered as well as it can be
                converged = True
                stalled += 0 if at_noise else 1
                break
            x = x_new
        if not converged:
            stalled += 1
        if m / t < opts.gap_tol:
            break
        t /= opts.mu_factor

    phi, grad, _ = problem.barrier(x, t, True)
    g_s = grad * scale
    # least-squares equality multipliers give the stationarity residual of the final center
    w, *_ = np.linalg.lstsq(A_s.T, -g_s, rcond=None)
    kkt = float(np.max(np.abs(g_s + A_s.T @ w))) / t
    pri = float(np.max(np.abs(A @ x - b), initial=0.0))
    return BarrierResult(x, stages, newton_total, m / t, kkt, pri, stalled, trace)
