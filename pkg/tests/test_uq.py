import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpstl.datasets import build_error_set, generate_gaussian
from cpstl.mas import AgentDynamics, CliqueSpec, FeedbackGains, build_stacked
from cpstl.uq import (
    CalibrationError, GainStructure, PredictionRegions, TrainingData, TrainingLevel,
    TrainingResult, agent_weights, calibrate_regions, conformal_quantile, coordinate_descent,
    empirical_cvar, empirical_var, initial_weights, pac_adjusted_level, radii_from,
    score_dataset, solve_P_of_C, solve_P_of_Gamma, training_level,
)


def cvar_scan(s, theta):
    """Brute force: the objective is piecewise linear with kinks at the samples."""
    s = np.asarray(s, dtype=float)
    return min(eta + np.maximum(s - eta, 0.0).sum() / (s.size * theta) for eta in s)


# ---------------------------------------------------------------- conformal

def test_conformal_examples():
    assert conformal_quantile(np.arange(1, 20), 0.05) == 19
    assert conformal_quantile(np.arange(10), 0.05) == math.inf
    assert conformal_quantile([1, 1, 1], 0.5) == 1
    with pytest.raises(ValueError):
        conformal_quantile([1.0], 1.0)


def test_pac_examples():
    assert pac_adjusted_level(0.05, math.exp(-8.0), 10_000) == pytest.approx(0.03, abs=1e-12)
    assert pac_adjusted_level(0.05, 1.0, 50) == 0.05
    with pytest.raises(ValueError):
        pac_adjusted_level(0.05, 0.05, 100)


def test_training_level_and_clamp():
    lv = training_level(100, 0.05)
    assert lv.theta_hat == pytest.approx((1 + 1 / 99) * 0.95)
    assert lv.q_c == pytest.approx(4.0)
    assert not lv.clamped
    with pytest.warns(RuntimeWarning):
        lv = training_level(10, 0.05)
    assert lv.clamped and lv.theta_hat == pytest.approx(0.9)


# ---------------------------------------------------------------- VaR / CVaR

def test_cvar_examples():
    assert empirical_cvar(np.arange(1, 11), 0.2) == pytest.approx(9.5)
    assert empirical_cvar(np.full(7, 2.5), 0.3) == pytest.approx(2.5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60),
       st.floats(0.01, 0.99))
def test_cvar_matches_scan_and_bounds_var(scores, theta):
    c = empirical_cvar(scores, theta)
    assert c == pytest.approx(cvar_scan(scores, theta), abs=1e-9, rel=1e-12)
    assert c >= empirical_var(scores, theta) - 1e-9


# ---------------------------------------------------------------- scores and weights

def test_score_examples(rng):
    assert score_dataset(np.array([[2.0, 4.0]]), [0.5, 0.5]).tolist() == [2.0]
    assert score_dataset(np.array([[2.0, 4.0]]), [0.0, 1.0]).tolist() == [4.0]
    norms = rng.random((20, 3))
    C = np.array([0.2, 0.3, 0.5])
    oracle = [max(C[j] * norms[s, j] for j in range(3)) for s in range(20)]
    assert np.allclose(score_dataset(norms, C), oracle)
    with pytest.raises(ValueError):
        score_dataset(norms, [0.5, 0.5])


def test_weight_helpers():
    cl = [CliqueSpec((1,)), CliqueSpec((2,)), CliqueSpec((1, 2))]
    assert initial_weights(cl, 2).tolist() == [0.5, 0.5, 0.0]
    assert agent_weights([0.2, 0.3, 0.5], cl, 2).tolist() == [0.5, 0.5]


# ---------------------------------------------------------------- LPs

def _scalar_data(w, level):
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    return TrainingData([dyn], [np.asarray(w, dtype=float)], [CliqueSpec((1,))], level)


def test_gain_lp_hand_instance():
    data = _scalar_data([[[1.0], [0.0]]], TrainingLevel(0.0, 1.0, 1, False))
    gains, res = solve_P_of_C([1.0], data)
    g = gains.mats[0][1, 0]
    assert res.objective == pytest.approx(1.0, abs=1e-8)
    assert abs(1.0 + g) <= 1.0 + 1e-8
    assert score_dataset(data.error_set(gains), [1.0])[0] == pytest.approx(1.0, abs=1e-8)


def test_gain_lp_zero_disturbance():
    data = _scalar_data(np.zeros((5, 3, 1)), training_level(5, 0.5))
    gains, res = solve_P_of_C([1.0], data)
    assert res.objective == pytest.approx(0.0, abs=1e-9)
    assert np.all(score_dataset(data.error_set(gains), [1.0]) <= 1e-9)


def test_weight_lp_hand_instance():
    C, res = solve_P_of_Gamma(np.tile([1.0, 3.0], (10, 1)), training_level(10, 0.5))
    assert C.tolist() == [0.75, 0.25]
    assert res.objective == pytest.approx(0.75, abs=1e-9)


def test_weight_lp_single_clique(rng):
    norms = rng.random((30, 1))
    lv = training_level(30, 0.2)
    C, res = solve_P_of_Gamma(norms, lv)
    assert C.tolist() == [1.0]
    assert res.objective == pytest.approx(empirical_cvar(norms[:, 0], lv.tail_fraction), abs=1e-7)


def _two_agent_data(structure=None, S=40, N=6, norm="inf"):
    dyns = [AgentDynamics(np.eye(2), np.eye(2), np.zeros(2)),
            AgentDynamics([[1.0, 0.1], [0.0, 0.9]], [[0.0], [1.0]], np.zeros(2))]
    cl = [CliqueSpec((1,)), CliqueSpec((2,)), CliqueSpec((1, 2))]
    ds = generate_gaussian(2, N, 2, 0.05, S, seed=11)
    return TrainingData.from_dataset(ds, np.arange(S), dyns, cl, 0.1, norm, structure)


@pytest.mark.parametrize("structure", [None, GainStructure("toeplitz", 2), GainStructure("full", 1)])
def test_lp_objectives_equal_cvar_of_scores(structure):
    data = _two_agent_data(structure)
    C = np.array([0.3, 0.3, 0.4])
    gains, r1 = solve_P_of_C(C, data)
    errs = data.error_set(gains)
    tail = data.level.tail_fraction
    assert r1.objective == pytest.approx(empirical_cvar(score_dataset(errs, C), tail), abs=1e-6)
    C2, r2 = solve_P_of_Gamma(errs, data.level)
    assert np.all(C2 >= 0) and C2.sum() == pytest.approx(1.0, abs=1e-12)
    assert r2.objective == pytest.approx(empirical_cvar(score_dataset(errs, C2), tail), abs=1e-6)
    assert r2.objective <= r1.objective + 1e-6


def test_gain_structure_is_respected():
    data = _two_agent_data(GainStructure("toeplitz", 2), N=7)
    gains, _ = solve_P_of_C([0.3, 0.3, 0.4], data)
    for i, (m, n) in enumerate(gains.dims, start=1):
        for t in range(7):
            for k in range(t):
                blk = gains.block(i, t, k)
                if t - k > 2:
                    assert not blk.any()
                else:
                    assert np.array_equal(blk, gains.block(i, t - k, 0))


def test_gain_lp_beats_zero_gains():
    data = _two_agent_data()
    C = np.array([0.3, 0.3, 0.4])
    _, res = solve_P_of_C(C, data)
    zero = FeedbackGains.zeros(data.dyns, data.N)
    base = empirical_cvar(score_dataset(data.error_set(zero), C), data.level.tail_fraction)
    assert res.objective <= base + 1e-9


def test_two_norm_fallback_improves():
    data = _two_agent_data(norm="2", S=20, N=4)
    C = np.array([0.3, 0.3, 0.4])
    gains, res = solve_P_of_C(C, data)
    assert res.status == "subgradient"
    zero = FeedbackGains.zeros(data.dyns, data.N)
    base = empirical_cvar(score_dataset(data.error_set(zero), C), data.level.tail_fraction)
    assert res.objective <= base + 1e-12


# ---------------------------------------------------------------- coordinate descent

def test_coordinate_descent_trace_and_block_descent():
    data = _two_agent_data()
    res = coordinate_descent(data, tau_max=3)
    assert [r["step"] for r in res.trace] == ["gains", "weights"] * 3
    for a, b in zip(res.trace[::2], res.trace[1::2]):
        assert b["objective"] <= a["objective"] + 1e-6
    assert res.C.sum() == pytest.approx(1.0)


def test_single_clique_converges_in_one_iteration():
    ds = generate_gaussian(1, 5, 1, 0.1, 30, seed=3)
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    data = TrainingData.from_dataset(ds, np.arange(30), [dyn], [CliqueSpec((1,))], 0.2)
    res = coordinate_descent(data, tau_max=2)
    objs = [r["objective"] for r in res.trace]
    assert res.C.tolist() == [1.0]
    assert objs == pytest.approx([objs[0]] * 4, abs=1e-7)
    direct, r = solve_P_of_C([1.0], data)
    assert r.objective == pytest.approx(objs[0], abs=1e-9)


def test_training_artifact_round_trip():
    data = _two_agent_data(GainStructure("toeplitz", 1))
    res = coordinate_descent(data, tau_max=1)
    text = json.dumps(res.to_dict(), sort_keys=True)
    back = TrainingResult.from_dict(json.loads(text))
    assert json.dumps(back.to_dict(), sort_keys=True) == text
    for a, b in zip(res.gains.mats, back.gains.mats):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------- calibration

def _cal_set(S, seed=0):
    dyn = AgentDynamics([[0.0]], [[1.0]], [0.0])
    ds = generate_gaussian(1, 4, 1, 1.0, S, seed=seed)
    return build_error_set(ds, np.arange(S), [build_stacked(dyn, 4)],
                           FeedbackGains.zeros([dyn], 4), [CliqueSpec((1,))])


def test_calibration_max_score_for_19():
    errs = _cal_set(19)
    pr = calibrate_regions(errs, [1.0], 0.05)
    assert pr.q == errs.norms.max()
    assert pr.radii.tolist() == [pr.q]


def test_calibration_too_small():
    with pytest.raises(CalibrationError, match="too small"):
        calibrate_regions(_cal_set(10), [1.0], 0.05)


def test_radius_scales_inverse_with_weight():
    r = radii_from(2.0, np.array([0.25, 0.5, 0.0]))
    assert r[0] == 8.0 and r[1] == 4.0 and math.isinf(r[2])


def test_pac_calibration_records_adjustment():
    errs = _cal_set(2000)
    pr = calibrate_regions(errs, [1.0], 0.1, pac_beta=0.1)
    assert pr.theta_used == pytest.approx(0.1 - math.sqrt(math.log(10) / 4000))
    d = pr.to_dict()
    assert d["pac"]["adjusted_theta"] == pr.theta_used
    back = PredictionRegions.from_dict(json.loads(json.dumps(d)))
    assert back.q == pr.q and back.pac_beta == 0.1
