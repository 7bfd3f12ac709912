"""CSV and YAML outputs of a planning run.

All numeric values are written with 12 significant digits.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import association
from .scenario import (Scenario, TrajectoryPlan, association_labels, causality_slack_from,
                       rate_profile, save_scenario)

RUN_FILES = ("iterations.csv", "trajectory.csv", "association.csv", "rates.csv", "users.csv")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_trajectory(plan: TrajectoryPlan, path) -> None:
    speed = np.linalg.norm(plan.velocities, axis=1)
    accel = np.linalg.norm(plan.accelerations, axis=1)
    rows = [[n + 1, *plan.positions[n], *plan.velocities[n], *plan.accelerations[n], speed[n], accel[n]]
            for n in range(plan.num_slots)]
    write_rows(path, ["n", "x", "y", "vx", "vy", "ax", "ay", "speed", "accel_norm"], rows)


def read_trajectory(path) -> TrajectoryPlan:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TrajectoryPlan(data[:, 1:3], data[:, 3:5], data[:, 5:7])


def write_rates(scenario: Scenario, plan: TrajectoryPlan, assoc, path) -> None:
    prof = rate_profile(scenario, plan, assoc)
    slack = np.concatenate([[np.nan], causality_slack_from(prof.uplink, prof.downlink)])
    labels = association_labels(assoc)
    rows = [[n + 1, prof.uplink[n], prof.downlink[n], slack[n], labels[n] + 1 if labels[n] >= 0 else 0]
            for n in range(scenario.num_slots)]
    write_rows(path, ["n", "uplink", "downlink", "causality_slack", "served_ceu"], rows)


def write_users(scenario: Scenario, plan: TrajectoryPlan, assoc, path) -> None:
    prof = rate_profile(scenario, plan, assoc)
    rows = [[k + 1, prof.per_user[k], scenario.rate_floor[k], scenario.weights[k]]
            for k in range(scenario.num_ceus)]
    write_rows(path, ["ceu", "average_rate", "rate_floor", "weight"], rows)


def write_iterations(history, path) -> None:
    header = ["iteration", "objective", "surrogate", "mobility_status", "newton_steps", "dual_gap",
              "accepted", "damping"]
    write_rows(path, header, [[h[key] for key in header] for h in history])


def write_run(out_dir, scenario: Scenario, result, extra: dict | None = None) -> Path:
    """Write the scenario echo, the five run CSVs and a small JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, out / "scenario.yaml")
    write_iterations(result.history, out / "iterations.csv")
    write_trajectory(result.plan, out / "trajectory.csv")
    association.write_table(scenario, result.assoc, out / "association.csv")
    write_rates(scenario, result.plan, result.assoc, out / "rates.csv")
    write_users(scenario, result.plan, result.assoc, out / "users.csv")
    summary = {"objective": result.objective, "converged": result.converged,
               "outer_iterations": result.outer_iterations,
               "objective_trace": list(map(float, result.objective_trace)),
               "violations": {k: float(v) for k, v in result.violations.items()}}
    summary.update(extra or {})
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out
