"""Shared fixtures and instance generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from uavrelay import immua, mobility
from uavrelay.scenario import TrajectoryPlan, random_fading, reference_scenario

_ACCEPTANCE: list = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    """Log one acceptance verdict; printed in the terminal summary."""
    _ACCEPTANCE.append((criterion, bool(ok), detail))
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


def random_plan(scenario, rng, spread: float = 0.4) -> TrajectoryPlan:
    """Mobility-feasible plan from a restored random walk around the start point."""
    n = scenario.num_slots
    step = scenario.v_max * scenario.slot_len
    raw = TrajectoryPlan(scenario.start_point + np.cumsum(rng.normal(0.0, spread * step, (n, 2)), axis=0),
                         rng.normal(0.0, spread * scenario.v_max, (n, 2)),
                         rng.normal(0.0, spread * scenario.a_max, (n, 2)))
    return mobility.feasibility_restore(scenario, None, raw)


def random_small_instance(rng, max_slots: int = 8, max_ceus: int = 3):
    """Reference radio parameters with random CEUs, fading, slot count, floors and weights."""
    n = int(rng.integers(3, max_slots + 1))
    k = int(rng.integers(1, max_ceus + 1))
    scn = reference_scenario(
        num_slots=n, period=float(rng.uniform(4.0, 20.0)) * n / 4.0,
        ceu_positions=(rng.uniform(0.0, 2000.0, (k, 2)) - [0.0, 500.0]).tolist(),
        rate_floor=(rng.uniform(0.0, 3.0, k) * rng.integers(0, 2)).tolist(),
        weights=rng.uniform(0.5, 2.0, k).tolist(),
        fading_sq_norms=random_fading(3, 8, int(rng.integers(1 << 30))).tolist(),
    )
    return scn, random_plan(scn, rng, spread=0.3)


@pytest.fixture(scope="session")
def reference():
    return reference_scenario()


@pytest.fixture(scope="session")
def reference_run(reference):
    """One IMMUA run on the reference scenario, shared by several tests."""
    return immua.run(reference)
