import math

import numpy as np
import pytest
from scipy import stats

from cpstl.datasets import build_error_set, generate_gaussian
from cpstl.mas import AgentDynamics, CliqueSpec, FeedbackGains, build_stacked
from cpstl.runtime import RuntimeOptions, initial_plans
from cpstl.stl import parse_formula
from cpstl.synthesis import CostWeights, SolverOptions, SynthesisProblem, tighten
from cpstl.uq import calibrate_regions
from cpstl.verify import (
    UnreachableTarget, coverage_experiment, error_std, gaussian_sampler, monte_carlo_satisfaction,
    union_bound_baseline, union_bound_radius, wilson_interval,
)


def wilson_closed_form(k, n, z=stats.norm.ppf(0.975)):
    p = k / n
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return c - h, c + h


def uniform(g, s):
    return g.uniform(size=s)


def unit_cdf(q):
    return min(max(q, 0.0), 1.0)


def test_wilson_matches_closed_form():
    for k, n in [(97, 100), (500, 500), (0, 20), (13, 40)]:
        lo, hi = wilson_interval(k, n)
        elo, ehi = wilson_closed_form(k, n)
        assert lo == pytest.approx(max(elo, 0.0), abs=1e-12)
        assert hi == pytest.approx(min(ehi, 1.0), abs=1e-12)


def test_coverage_small_calibration_set():
    rep = coverage_experiment(uniform, unit_cdf, 0.05, 19, 2000, seed=3)
    assert rep.exact_marginal == pytest.approx(0.95)
    sd = math.sqrt(0.95 * 0.05 / 2000)
    assert 0.95 - 3 * sd <= rep.marginal <= 0.95 + 1 / 20 + 3 * sd
    assert rep.beta_params == (19, 1)


def test_single_trial_warns():
    with pytest.warns(RuntimeWarning):
        rep = coverage_experiment(uniform, unit_cdf, 0.1, 19, 1, seed=0)
    assert rep.conditional.size == 1


def test_pac_mode_fraction():
    beta = 0.1
    rep = coverage_experiment(uniform, unit_cdf, 0.1, 1000, 400, seed=4, pac_beta=beta)
    assert rep.theta_used < 0.1
    assert rep.pac_fraction >= (1 - beta) - 3 * math.sqrt(beta * (1 - beta) / 400)


def test_union_bound_single_step():
    sigma = 0.3
    r = union_bound_radius([np.array([[sigma]])], 0.9, norm="inf")
    assert r == pytest.approx(sigma * stats.norm.ppf(0.95), rel=1e-10)


def test_union_bound_grows_with_steps():
    one = union_bound_radius([np.full((1, 1), 0.2)], 0.7)
    many = union_bound_radius([np.full((100, 1), 0.2)], 0.7)
    assert many > one


def test_union_bound_unreachable():
    with pytest.raises(UnreachableTarget):
        union_bound_radius([np.ones((3, 1))], 1.0)
    with pytest.raises(UnreachableTarget):
        union_bound_radius([np.ones((3, 1))], 0.99, max_radius=1.0)


def test_error_std_deadbeat():
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    N = 4
    G = np.zeros((N, N))
    for t in range(1, N):
        G[t, t - 1] = -1.0
    s = error_std(dyn, G, N, 0.04)
    assert np.allclose(s, 0.2)
    assert np.allclose(error_std(dyn, np.zeros((N, N)), N, 0.04).ravel(),
                       0.2 * np.sqrt(np.arange(1, N + 1)))
    r = union_bound_baseline(0.04, FeedbackGains([G], N), [dyn], N, 0.8)
    assert r[0] == pytest.approx(0.2 * stats.norm.ppf(1 - 0.2 / (2 * N)), rel=1e-9)


# ---------------------------------------------------------------- Monte Carlo

def _hugging_problem(radius_scale=1.0):
    """Plan pushed against ``x <= 0`` by a reference at 1, so margins bind."""
    N, theta = 6, 0.05
    dyn = AgentDynamics([[1.0]], [[1.0]], [-1.0])
    cl = [CliqueSpec((1,), parse_formula("G[1,6](x1 <= 0)", {"x1": 1}))]
    gains = FeedbackGains.zeros([dyn], N)
    ds = generate_gaussian(1, N, 1, 0.01, 301, seed=8)
    errs = build_error_set(ds, np.arange(1, 301), [build_stacked(dyn, N)], gains, cl)
    pr = calibrate_regions(errs, [1.0], theta)
    spec = tighten(cl, pr.radii * radius_scale, 1)
    cost = CostWeights([[1.0]], [[0.01]], [[1.0]], [1.0])
    prob = SynthesisProblem([dyn], [cost], spec, N, SolverOptions(restarts=2))
    return prob, gains, theta


def test_zero_disturbance_rate_is_one():
    prob, gains, _ = _hugging_problem()
    plans = initial_plans(prob)
    assert plans[1].feasible
    rep = monte_carlo_satisfaction(prob, gains, plans, 5, seed=0,
                                   sampler=lambda g: [np.zeros((prob.N, 1))])
    assert rep.rate == 1.0 and rep.successes == 5


def test_negative_control_detects_shrunk_radii():
    opts = RuntimeOptions(replan_from="nominal")
    prob, gains, theta = _hugging_problem()
    sampler = gaussian_sampler(0.01, [1], prob.N)
    good = monte_carlo_satisfaction(prob, gains, initial_plans(prob), 150, 1, sampler, opts)
    bad_prob, _, _ = _hugging_problem(0.5)
    bad = monte_carlo_satisfaction(bad_prob, gains, initial_plans(bad_prob), 150, 1, sampler, opts)
    assert good.wilson[1] >= 1 - theta
    assert bad.wilson[1] < 1 - theta
    assert bad.rate < good.rate


def test_runs_are_order_independent():
    prob, gains, _ = _hugging_problem()
    plans = initial_plans(prob)
    sampler = gaussian_sampler(0.01, [1], prob.N)
    opts = RuntimeOptions(replan_from="nominal")
    a = monte_carlo_satisfaction(prob, gains, plans, 4, 7, sampler, opts)
    b = monte_carlo_satisfaction(prob, gains, plans, 6, 7, sampler, opts)
    assert np.array_equal(a.robustness, b.robustness[:4])
