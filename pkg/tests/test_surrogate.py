import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavrelay import surrogate as sg
from uavrelay.scenario import (TrajectoryPlan, association_from_labels, hover_plan, rate_profile,
                               reference_scenario, slot_user_rate, slot_user_rates, uplink_rate)


@pytest.fixture(scope="module")
def scn():
    return reference_scenario(num_slots=8, period=16.0)


def random_expansion(scn, rng, half=1000.0):
    return scn.start_point + rng.uniform(-half, half, (scn.num_slots, 2))


def test_constant_term_above_gbs(scn):
    pos = np.tile(scn.gbs_positions[1], (scn.num_slots, 1))
    model = sg.build(scn, pos)
    q = scn.p_gbs * scn.ref_gain * scn.fading_sq_norms[1] / (scn.noise_power * 1e4)
    expected = math.log2(1 + 3 * q) / 3
    np.testing.assert_allclose(model.b_r[:, 1], expected, rtol=1e-14)


def test_coefficient_signs_random_expansions(scn):
    rng = np.random.default_rng(1)
    for _ in range(125):  # 1000 expansion points
        model = sg.build(scn, random_expansion(scn, rng, 3000.0))
        assert np.all(model.a_r >= 0) and np.all(model.c_k >= 0)


def test_build_accepts_plan_and_rejects_nonfinite(scn):
    plan = hover_plan(scn)
    a = sg.build(scn, plan)
    b = sg.build(scn, plan.positions)
    assert np.array_equal(a.c_k, b.c_k)
    bad = np.array(plan.positions)
    bad[2, 0] = np.nan
    with pytest.raises(ValueError):
        sg.build(scn, bad)


def test_minorants_at_expansion(scn):
    rng = np.random.default_rng(2)
    pos = random_expansion(scn, rng)
    model = sg.build(scn, pos)
    for n in range(scn.num_slots):
        assert sg.uplink_lower(model, scn, pos[n], n) == pytest.approx(model.b_r[n].sum(), rel=1e-14)
        for k in range(scn.num_ceus):
            exact = slot_user_rate(scn, pos[n], k)
            assert abs(sg.user_rate_lower(model, scn, pos[n], k, n) - exact) <= 1e-12 * exact


def test_uplink_minorant_below_exact_at_expansion(scn):
    # the even SNR split loses something unless all GBS terms are equal
    rng = np.random.default_rng(3)
    pos = random_expansion(scn, rng)
    model = sg.build(scn, pos)
    assert np.all(model.b_r.sum(axis=1) <= uplink_rate(scn, pos) + 1e-12)


def test_uplink_minorant_decreases_far_away(scn):
    pos = np.tile(scn.start_point, (scn.num_slots, 1))
    model = sg.build(scn, pos)
    here = sg.uplink_lower(model, scn, pos[0], 0)
    for direction in ([1, 0], [0, 1], [-0.6, 0.8]):
        assert sg.uplink_lower(model, scn, pos[0] + 1000.0 * np.array(direction), 0) < here


def test_zero_curvature_user_minorant_is_constant(scn):
    model = sg.build(scn, hover_plan(scn))
    c = np.array(model.c_k)
    c[:] = 0.0
    flat = sg.SurrogateModel(model.expansion, model.a_r, model.b_r, c, model.d_k, model.gbs_sq0, model.ceu_sq0)
    assert sg.user_rate_lower(flat, scn, [0.0, 0.0], 1, 3) == model.d_k[3, 1]


def direct_majorant(scn, p, k):
    beta = scn.p_uav * scn.ref_gain / (3 * scn.noise_power)
    dx, dy = p[0] - scn.ceu_positions[k, 0], p[1] - scn.ceu_positions[k, 1]
    return (math.log2(1 + beta / scn.altitude**2) + math.log2(1 + beta / dx**2) + math.log2(1 + beta / dy**2)) / 3


def test_majorant_formula(scn):
    rng = np.random.default_rng(4)
    for p in scn.start_point + rng.uniform(-900, 900, (50, 2)):
        for k in range(scn.num_ceus):
            assert sg.user_rate_upper(scn, p, k) == pytest.approx(direct_majorant(scn, p, k), rel=1e-13)


def test_majorant_symmetric_in_axes(scn):
    e = scn.ceu_positions[0]
    assert sg.user_rate_upper(scn, e + [30.0, 70.0], 0) == pytest.approx(sg.user_rate_upper(scn, e + [70.0, 30.0], 0),
                                                                          rel=1e-15)
    assert sg.user_rate_upper(scn, e + [30.0, 70.0], 0) == sg.user_rate_upper(scn, e + [-30.0, -70.0], 0)


def test_far_field_limits(scn):
    # the rate vanishes; the majorant keeps its altitude third
    e = scn.ceu_positions[0]
    floor = math.log2(1 + scn.p_uav * scn.ref_gain / (3 * scn.noise_power * scn.altitude**2)) / 3
    for d in (1e5, 1e7, 1e9):
        far = e + [d, d]
        assert slot_user_rate(scn, far, 0) < 1e-12 * d**2 * 2
        assert floor < sg.user_rate_upper(scn, far, 0) < floor + 1e-12 * d**2
    assert slot_user_rate(scn, e + [1e9, 1e9], 0) < 1e-9


def test_majorant_axis_clamp(scn):
    e = scn.ceu_positions[1]
    beta = scn.p_uav * scn.ref_gain / (3 * scn.noise_power)
    on_axis = sg.user_rate_upper(scn, e + [0.0, 50.0], 1)
    near_axis = sg.user_rate_upper(scn, e + [5e-4, 50.0], 1)
    at_eps = sg.user_rate_upper(scn, e + [1e-3, 50.0], 1)
    expected = (math.log2(1 + beta / scn.altitude**2) + math.log2(1 + beta / 1e-6) + math.log2(1 + beta / 2500)) / 3
    assert on_axis == pytest.approx(expected, rel=1e-14)
    assert near_axis == on_axis == pytest.approx(at_eps, rel=1e-14)
    assert math.isfinite(sg.user_rate_upper(scn, e, 1))
    assert sg.user_rate_upper(scn, e, 1) >= slot_user_rate(scn, e, 1)


def test_majorant_derivatives_match_finite_differences(scn):
    rng = np.random.default_rng(5)
    h = 1e-4
    for p in scn.ceu_positions[0] + rng.uniform(20, 600, (20, 2)) * rng.choice([-1, 1], (20, 2)):
        val, g, hd = sg.user_rate_upper_terms(scn, p)
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            vp, gp, _ = sg.user_rate_upper_terms(scn, p + step)
            vm, gm, _ = sg.user_rate_upper_terms(scn, p - step)
            np.testing.assert_allclose(g[:, j], (vp - vm) / (2 * h), rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(hd[:, j], (gp[:, j] - gm[:, j]) / (2 * h), rtol=1e-5, atol=1e-12)


def test_downlink_majorant(scn):
    rng = np.random.default_rng(6)
    plan_pos = random_expansion(scn, rng)
    model = sg.build(scn, plan_pos)
    labels = rng.integers(-1, scn.num_ceus, scn.num_slots)
    labels[0] = -1
    labels[2] = -1
    labels[3] = 2
    rho = association_from_labels(scn, labels)
    plan = TrajectoryPlan(plan_pos, np.zeros_like(plan_pos), np.zeros_like(plan_pos))
    exact = rate_profile(scn, plan, rho).downlink
    assert sg.downlink_upper(model, scn, plan_pos[2], rho, 2) == 0.0
    assert sg.downlink_upper(model, scn, plan_pos[3], rho, 3) == sg.user_rate_upper(scn, plan_pos[3], 2)
    for n in range(1, scn.num_slots):
        assert sg.downlink_upper(model, scn, plan_pos[n], rho, n) >= exact[n] - 1e-12


def test_vectorized_forms_match_scalar(scn):
    rng = np.random.default_rng(7)
    model = sg.build(scn, random_expansion(scn, rng))
    pos = random_expansion(scn, rng)
    low, _, _ = sg.user_lower_all(model, scn, pos)
    up, _, _ = sg.uplink_lower_all(model, scn, pos)
    for n in range(scn.num_slots):
        assert up[n] == pytest.approx(sg.uplink_lower(model, scn, pos[n], n), rel=1e-13)
        for k in range(scn.num_ceus):
            assert low[n, k] == pytest.approx(sg.user_rate_lower(model, scn, pos[n], k, n), rel=1e-12, abs=1e-12)


def test_rebuild_at_new_expansion_keeps_signs(scn):
    rng = np.random.default_rng(8)
    model = sg.build(scn, hover_plan(scn))
    moved = sg.build(scn, model.expansion + rng.normal(0, 200, model.expansion.shape))
    assert np.all(moved.a_r >= 0) and np.all(moved.c_k >= 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1000, 3000), st.floats(-1500, 2500), st.floats(-1000, 3000), st.floats(-1500, 2500))
def test_sandwich_property(ex, ey, px, py):
    scn = reference_scenario(num_slots=2, period=4.0)
    model = sg.build(scn, np.array([[ex, ey], [ex, ey]]))
    p = np.array([px, py])
    assert sg.uplink_lower(model, scn, p, 0) <= uplink_rate(scn, p) + 1e-9
    exact = slot_user_rates(scn, p[None])[:, 0]
    for k in range(scn.num_ceus):
        assert sg.user_rate_lower(model, scn, p, k, 0) <= exact[k] + 1e-9
        assert sg.user_rate_upper(scn, p, k) >= exact[k] - 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(5, 1500), st.floats(5, 1500), st.floats(5, 1500), st.floats(5, 1500), st.floats(0, 1),
       st.sampled_from([(1, 1), (1, -1), (-1, 1), (-1, -1)]))
def test_majorant_convex_on_one_side(ax, ay, bx, by, t, signs):
    scn = reference_scenario(num_slots=2, period=4.0)
    e = scn.ceu_positions[3]
    s = np.array(signs, dtype=float)
    p, q = e + s * [ax, ay], e + s * [bx, by]
    mid = sg.user_rate_upper(scn, t * p + (1 - t) * q, 3)
    assert mid <= t * sg.user_rate_upper(scn, p, 3) + (1 - t) * sg.user_rate_upper(scn, q, 3) + 1e-9


def test_export_csv(tmp_path, scn):
    model = sg.build(scn, hover_plan(scn))
    path = tmp_path / "coef.csv"
    sg.export_csv(model, path)
    rows = path.read_text().strip().splitlines()
    assert len(rows) == scn.num_slots + 1
    header = rows[0].split(",")
    assert header[:3] == ["n", "x", "y"] and "c_4" in header and "b_r_3" in header
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, header.index("d_2")], model.d_k[:, 1], rtol=1e-11)
