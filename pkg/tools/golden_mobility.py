"""Reference objective of one small trajectory subproblem from a general-purpose conic solver.

Builds the N = 6, K = 2 instance used by the golden test, solves the
same convex program with cvxpy (Clarabel), cross-checks the in-package
barrier solver, and writes ``tests/data/golden_mobility.json``.

Run once: ``python3 tools/golden_mobility.py``. Needs the ``oracle`` extra.
"""

import json
import math
from pathlib import Path

import cvxpy as cp
import numpy as np

from uavrelay import mobility
from uavrelay import surrogate as sg
from uavrelay.scenario import LOG2E, association_from_labels, hover_plan, reference_scenario

SCALE = 100.0
OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_mobility.json"


def instance():
    start = np.array([866.0254037844386, 500.0])
    scn = reference_scenario(
        num_slots=6, period=12.0,
        ceu_positions=(start + np.array([[-230.0, 210.0], [260.0, -240.0]])).tolist(),
        p_gbs=0.5, rate_floor=[3.7, 5.3], weights=[1.0, 1.5],
    )
    labels = np.array([-1, 0, 1, 0, 1, 1])
    return scn, labels


def solve_cvxpy(scn, model, rho):
    n, k = scn.num_slots, scn.num_ceus
    dt = scn.slot_len
    # offsets from the start point in units of SCALE metres keep the conic solver well conditioned
    du = cp.Variable((n, 2))
    dv = cp.Variable((n, 2))
    da = cp.Variable((n, 2))
    u = scn.start_point + SCALE * du
    v, a = SCALE * dv, SCALE * da
    cons = [du[0] == 0, du[n - 1] == 0, da[n - 1] == 0]
    for i in range(n - 1):
        cons += [v[i + 1] == v[i] + dt * a[i],
                 u[i + 1] == u[i] + dt * v[i] + 0.5 * dt**2 * a[i],
                 cp.norm(du[i + 1] - du[i]) <= scn.v_max * dt / SCALE]
    cons += [cp.norm(dv, axis=1) <= scn.v_max / SCALE, cp.norm(da, axis=1) <= scn.a_max / SCALE]

    def user_lower(i, j):
        d2 = SCALE**2 * cp.sum_squares(du[i] - (scn.ceu_positions[j] - scn.start_point) / SCALE)
        return -model.c_k[i, j] * (d2 - model.ceu_sq0[i, j]) + model.d_k[i, j]

    def uplink_lower(i):
        terms = [-model.a_r[i, m] * (SCALE**2 * cp.sum_squares(du[i] - (scn.gbs_positions[m] - scn.start_point) / SCALE)
                                     - model.gbs_sq0[i, m])
                 + model.b_r[i, m] for m in range(scn.num_gbs)]
        return cp.sum(cp.hstack(terms))

    beta = scn.p_uav * scn.ref_gain / (3.0 * scn.noise_power)
    const = math.log2(1.0 + beta / scn.altitude**2)
    side = np.sign(model.expansion[:, None, :] - scn.ceu_positions[None])  # (N, K, 2)

    def user_upper(i, j):
        parts = []
        for c in range(2):
            z = side[i, j, c] * (du[i, c] - (scn.ceu_positions[j, c] - scn.start_point[c]) / SCALE)
            cons.append(z >= 1e-5)
            # log2(1 + beta / z^2) written as a logistic of a convex argument
            parts.append(cp.logistic(math.log(beta / SCALE**2) - 2.0 * cp.log(z)) * LOG2E)
        return (const + parts[0] + parts[1]) / 3.0

    obj = 0
    for j in range(k):
        served = [i for i in range(n) if rho[j, i]]
        rate = sum(user_lower(i, j) for i in served) / n
        obj += scn.weights[j] * rate
        cons.append(rate >= scn.rate_floor[j])
    up = [uplink_lower(i) for i in range(n)]
    down = [sum(user_upper(i, j) for j in range(k) if rho[j, i]) if rho[:, i].any() else 0 for i in range(n)]
    for last in range(1, n):
        cons.append(sum(up[:last]) >= sum(down[1 : last + 1]))
    prob = cp.Problem(cp.Maximize(obj), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value, scn.start_point + SCALE * du.value, prob.status


def main():
    scn, labels = instance()
    rho = association_from_labels(scn, labels)
    model = sg.build(scn, hover_plan(scn))
    value, u, status = solve_cvxpy(scn, model, rho)
    ours = mobility.solve(scn, model, rho, hover_plan(scn))
    print(f"cvxpy status {status}, objective {value:.12g}")
    print(f"barrier solver {ours.status}, objective {ours.objective:.12g}, "
          f"rel diff {abs(ours.objective - value) / abs(value):.3g}")
    print("max position difference", float(np.abs(ours.plan.positions - u).max()))
    print("surrogate margins", ours.slack_report["floor_margin"], ours.slack_report["causality_margin"])
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps({
        "scenario": scn.to_dict(), "labels": labels.tolist(), "expansion": "hover",
        "objective": value, "solver": f"cvxpy {cp.__version__} CLARABEL", "status": status,
    }, indent=2) + "\n")


if __name__ == "__main__":
    main()
