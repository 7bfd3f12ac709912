import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_plan, random_small_instance
from uavrelay import association, baselines, immua
from uavrelay.scenario import (association_from_labels, association_labels, audit_plan, causality_slack,
                               check_association, hover_plan, rate_profile, reference_scenario)


@pytest.fixture(scope="module")
def small():
    return reference_scenario(num_slots=20, period=40.0)


def causal(scn, plan, assoc):
    return causality_slack(rate_profile(scn, plan, assoc)).min() >= -1e-9


# static

@settings(max_examples=20, deadline=None)
@given(st.integers(2, 40), st.floats(1.0, 60.0), st.floats(0.5, 10.0))
def test_static_is_feasible_hover(n, v_max, a_max):
    scn = reference_scenario(num_slots=n, period=2.0 * n, v_max=v_max, a_max=a_max)
    plan = baselines.static_trajectory(scn)
    assert audit_plan(scn, plan).feasible
    assert np.all(plan.velocities == 0) and np.all(plan.accelerations == 0)
    dist = np.linalg.norm(plan.positions[:, None] - scn.ceu_positions[None], axis=2)
    assert np.all(dist == dist[0])


def test_static_objective_ignores_speed_limit(small):
    values = [baselines.evaluate_trajectory(small.replace(v_max=v), "static",
                                            baselines.static_trajectory(small)).objective for v in (30.0, 50.0)]
    assert values[0] == values[1]


# circles

@pytest.mark.parametrize("radius", [50.0, 200.0, 500.0, 800.0])
def test_circle_is_feasible_and_closed(small, radius):
    plan = baselines.circle_trajectory(small, radius)
    report = audit_plan(small, plan)
    assert report.feasible, report.violations
    assert np.linalg.norm(plan.positions[-1] - small.start_point) <= 1e-6 * small.v_max * small.slot_len


def test_circle_reference_geometry(reference):
    for radius in (200.0, 500.0, 800.0):
        ref = baselines.circle_reference(reference, radius)
        rad = np.linalg.norm(ref - reference.start_point, axis=1)
        assert rad[0] == rad[-1] == 0.0
        on = np.isclose(rad, radius, rtol=1e-12)
        assert on.sum() >= reference.num_slots // 2
        ang = np.unwrap(np.arctan2(*(ref[on] - reference.start_point).T[::-1]))
        assert np.all(np.diff(ang) <= 1e-12)  # clockwise


def test_circle_orbit_speed(reference):
    # cruise speed is capped by the speed limit or by the centripetal limit, whichever binds
    for radius, expected in ((200.0, np.sqrt(5.0 * 200.0)), (800.0, 50.0)):
        plan = baselines.circle_trajectory(reference, radius)
        speed = np.linalg.norm(plan.velocities, axis=1)
        assert speed.max() <= reference.v_max * (1 + 1e-6)
        assert np.median(speed[speed > 0.5 * expected]) == pytest.approx(expected, rel=0.03)


def test_circle_tracks_reference(reference):
    ref = baselines.circle_reference(reference, 500.0)
    plan = baselines.circle_trajectory(reference, 500.0)
    assert np.linalg.norm(plan.positions - ref, axis=1).max() < 10.0


def test_circle_rejects_bad_radius(small):
    with pytest.raises(ValueError):
        baselines.circle_trajectory(small, 0.0)
    with pytest.raises(ValueError):
        baselines.circle_trajectory(small, -5.0)


def test_circle_short_horizon_still_feasible():
    scn = reference_scenario(num_slots=6, period=12.0)
    plan = baselines.circle_trajectory(scn, 800.0)
    assert audit_plan(scn, plan).feasible


def test_arc_step_respects_limits():
    for radius in (50.0, 200.0, 1000.0):
        theta = baselines._arc_step(radius, 50.0, 5.0, 2.0)
        speed = 2 * radius * np.tan(theta / 2) / 2.0
        assert speed <= 50.0 * (1 + 1e-12)
        assert 2 * speed * np.sin(theta / 2) / 2.0 <= 5.0 * (1 + 1e-9)


# fixed association policies

def test_random_association_seeded(small):
    plan = hover_plan(small)
    a = baselines.random_association(small, plan, 5)
    b = baselines.random_association(small, plan, 5)
    c = baselines.random_association(small, plan, 6)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    check_association(small, a)
    assert causal(small, plan, a)


def test_random_association_single_ceu():
    scn = reference_scenario(num_slots=12, period=24.0, ceu_positions=[[900.0, 500.0]])
    labels = association_labels(baselines.random_association(scn, hover_plan(scn), 1))
    assert labels[0] == -1 and np.all(labels[1:] == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-4, 10.0))
def test_repair_makes_any_association_causal(seed, p_gbs):
    rng = np.random.default_rng(seed)
    scn, plan = random_small_instance(rng)
    scn = scn.replace(p_gbs=p_gbs)
    labels = rng.integers(-1, scn.num_ceus, scn.num_slots)
    labels[0] = -1
    fixed = baselines.repair_causality(scn, plan, association_from_labels(scn, labels))
    check_association(scn, fixed)
    assert causal(scn, plan, fixed)
    kept = association_labels(fixed)
    assert np.all((kept == labels) | (kept == -1))  # repair only idles slots


def test_repair_idles_the_earliest_offender():
    scn = reference_scenario(num_slots=5, period=10.0, p_gbs=1e-3)
    plan = hover_plan(scn)
    m = association.slot_uplink(scn, plan)[0]
    rate4 = rate_profile(scn, plan, np.zeros((4, 5), int)).slot_user_rate[3, 0]
    assert rate4 > m  # one slot of uplink cannot cover one delivery
    fixed = baselines.repair_causality(scn, plan, association_from_labels(scn, [-1, 3, 3, 3, 3]))
    labels = association_labels(fixed)
    assert labels[1] == -1


def test_clockwise_order_compass_points():
    u0 = reference_scenario().start_point
    # north, east, south, west
    ceus = (u0 + np.array([[0.0, 300.0], [300.0, 0.0], [0.0, -300.0], [-300.0, 0.0]])).tolist()
    scn = reference_scenario(ceu_positions=ceus)
    order = baselines.clockwise_order(scn)
    assert order.tolist() == [0, 1, 2, 3]  # from CEU 1 (north) turning clockwise
    shuffled = reference_scenario(ceu_positions=[ceus[2], ceus[0], ceus[3], ceus[1]])  # S, N, W, E
    assert baselines.clockwise_order(shuffled).tolist() == [0, 2, 1, 3]


def test_clockwise_order_reference(reference):
    assert baselines.clockwise_order(reference).tolist() == [0, 1, 3, 2]


def test_clockwise_blocks(reference):
    plan = hover_plan(reference)
    labels = association_labels(baselines.clockwise_association(reference, plan))
    assert labels[0] == -1
    order = baselines.clockwise_order(reference)
    sizes = [int(np.sum(labels == k)) for k in order]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == reference.num_slots - 1
    first = [int(np.argmax(labels == k)) for k in order]
    assert first == sorted(first)


def test_clockwise_single_ceu():
    scn = reference_scenario(num_slots=9, period=18.0, ceu_positions=[[900.0, 520.0]])
    labels = association_labels(baselines.clockwise_association(scn, hover_plan(scn)))
    assert labels[0] == -1 and np.all(labels[1:] == 0)


# exhaustive oracle

def test_brute_force_two_slots():
    scn = reference_scenario(num_slots=2, period=4.0, rate_floor=0.0)
    res = baselines.brute_force_association(scn, hover_plan(scn))
    rates = rate_profile(scn, hover_plan(scn), np.zeros((4, 2), int)).slot_user_rate[:, 1]
    up = association.slot_uplink(scn, hover_plan(scn))[0]
    best = int(np.argmax(np.where(rates <= up, rates, -np.inf)))
    assert association_labels(res.assoc).tolist() == [-1, best]
    assert res.value == pytest.approx(rates[best] / 2)
    starved = scn.replace(p_gbs=1e-9)
    assert association_labels(baselines.brute_force_association(starved, hover_plan(starved)).assoc).tolist() == [-1, -1]


def test_brute_force_reports_infeasible_floors():
    scn = reference_scenario(num_slots=5, period=10.0, rate_floor=10.0)
    res = baselines.brute_force_association(scn, hover_plan(scn))
    assert not res.feasible and res.feasible_count == 0


def test_brute_force_pattern_limit(reference):
    with pytest.raises(ValueError, match="exceed"):
        baselines.brute_force_association(reference, hover_plan(reference))


def test_brute_force_prefers_lexicographically_first():
    scn = reference_scenario(num_slots=3, period=6.0, rate_floor=0.0,
                             ceu_positions=[[800.0, 450.0], [800.0, 450.0]])
    res = baselines.brute_force_association(scn, hover_plan(scn))
    assert association_labels(res.assoc).tolist() == [-1, 0, 0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_brute_force_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    scn, plan = random_small_instance(rng, max_slots=6)
    perm = rng.permutation(scn.num_ceus)
    permuted = scn.replace(ceu_positions=scn.ceu_positions[perm], rate_floor=scn.rate_floor[perm],
                           weights=scn.weights[perm])
    a = baselines.brute_force_association(scn, plan)
    b = baselines.brute_force_association(permuted, plan)
    assert a.feasible == b.feasible and a.feasible_count == b.feasible_count
    if a.feasible:
        assert a.value == pytest.approx(b.value, rel=1e-12)
        # relabel b back and confirm it is also optimal for the original instance
        back = association_from_labels(scn, np.where(association_labels(b.assoc) >= 0,
                                                     perm[association_labels(b.assoc)], -1))
        assert immua.exact_objective(scn, plan, back) == pytest.approx(a.value, rel=1e-12)


# evaluation and multi-start

def test_benchmark_rows(small):
    rows = baselines.benchmark(small, radii=(200.0,), seed=3)
    assert [r.name for r in rows] == ["static", "circle_200", "random_association", "clockwise_association"]
    for r in rows:
        assert audit_plan(small, r.plan).feasible
        check_association(small, r.assoc)
        assert causal(small, r.plan, r.assoc)
        assert r.objective == pytest.approx(immua.exact_objective(small, r.plan, r.assoc))


def test_random_start_is_feasible(small):
    rng = np.random.default_rng(0)
    for _ in range(3):
        start = baselines.random_start(small, rng)
        assert start is not None
        plan, assoc = start
        assert immua.is_jointly_feasible(small, plan, assoc)


def test_multi_start_single_is_default_run():
    scn = reference_scenario(num_slots=12, period=24.0)
    best, objectives = baselines.multi_start(scn, None, 1, seed=0)
    assert objectives == [immua.run(scn).objective]
    assert best.objective_trace == immua.run(scn).objective_trace


def test_multi_start_dominates_single():
    scn = reference_scenario(num_slots=12, period=24.0)
    best, objectives = baselines.multi_start(scn, None, 4, seed=1)
    assert len(objectives) == 4
    assert best.objective == np.nanmax(objectives) >= objectives[0]
    again, objectives2 = baselines.multi_start(scn, None, 4, seed=1)
    assert np.array_equal(objectives, objectives2, equal_nan=True)


def test_random_plan_helper(small):
    plan = random_plan(small, np.random.default_rng(0))
    assert audit_plan(small, plan).feasible
