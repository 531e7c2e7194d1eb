import json

import numpy as np
import pytest

from cpstl.mas import (
    AgentDynamics, CliqueSpec, FeedbackGains, aggregate, build_stacked, causal_mask, error_trajectory,
)
from cpstl.runtime import (
    ProtocolError, RuntimeOptions, initial_plans, run_closed_loop, select_solvers, trace_lines,
)
from cpstl.stl import eval_robustness, parse_formula
from cpstl.synthesis import CostWeights, SynthesisProblem, tighten

N = 8


def _problem(collab=True, x0=(0.0, 3.0), radius=0.1):
    dyns = [AgentDynamics([[1.0]], [[1.0]], [x]) for x in x0]
    cl = [CliqueSpec((1,), parse_formula("F[2,8](x1 >= 1)", {"x1": 1})),
          CliqueSpec((2,), parse_formula("F[2,8](x2 <= 2.5)", {"x2": 1}))]
    if collab:
        cl.append(CliqueSpec((1, 2), parse_formula("F[3,8] near(x1, x2, 0.5)",
                                                   {"x1": 1, "x2": 1})))
    spec = tighten(cl, [radius] * len(cl), 2)
    return SynthesisProblem(dyns, [CostWeights.default(d) for d in dyns], spec, N)


def _gains(prob, rng):
    mats = []
    for d in prob.dyns:
        G = -0.5 * rng.random((N, N))
        G[~causal_mask(1, 1, N)] = 0.0
        mats.append(G)
    return FeedbackGains(mats, N)


def _noise(rng, M=2, scale=0.05):
    return [scale * rng.standard_normal((N, 1)) for _ in range(M)]


# ---------------------------------------------------------------- selection

def test_select_examples():
    one = {1: [(1, 2, 3)], 2: [(1, 2, 3)], 3: [(1, 2, 3)]}
    assert select_solvers({1: 1.0, 2: 2.0, 3: 3.0}, one) == [1]
    assert select_solvers({1: 1.0, 2: 1.0}, {1: [(1, 2)], 2: [(1, 2)]}) == [1]
    # agent 2 wins clique (2,3) but not (1,2)
    cq = {1: [(1, 2)], 2: [(1, 2), (2, 3)], 3: [(2, 3)]}
    assert select_solvers({1: 0.0, 2: 1.0, 3: 2.0}, cq) == [1]
    with pytest.raises(ProtocolError):
        select_solvers({1: 0.0}, {1: [(1, 2)]})


def test_disjoint_cliques_solve_concurrently():
    dyns = [AgentDynamics([[1.0]], [[1.0]], [x]) for x in (0.0, 2.0, 10.0, 12.0)]
    cl = [CliqueSpec((1, 2), parse_formula("F[1,4] near(x1, x2, 0.5)", {"x1": 1, "x2": 1})),
          CliqueSpec((3, 4), parse_formula("F[1,4] near(x3, x4, 0.5)", {"x3": 1, "x4": 1}))]
    prob = SynthesisProblem(dyns, [CostWeights.default(d) for d in dyns],
                            tighten(cl, [0.0, 0.0], 4), 4)
    gains = FeedbackGains.zeros(dyns, 4)
    tr = run_closed_loop(prob, gains, [np.zeros((4, 1))] * 4)
    assert tr.selected[0] == [1, 3]
    assert tr.disjointness_violations == 0
    assert tr.satisfied


# ---------------------------------------------------------------- closed loop

def test_zero_noise_reproduces_nominal_plans():
    prob = _problem(collab=False)
    plans = initial_plans(prob)
    assert all(p.feasible for p in plans.values())
    tr = run_closed_loop(prob, FeedbackGains.zeros(prob.dyns, N), [np.zeros((N, 1))] * 2, plans)
    for i in (1, 2):
        assert np.allclose(tr.x[i], plans[i].z[i], atol=1e-12)
    nominal = min(eval_robustness(c.formula, plans[c.clique.members[0]].z[c.clique.members[0]])
                  for c in prob.spec.cliques)
    assert tr.robustness == pytest.approx(nominal, abs=1e-12)
    assert tr.satisfied


@pytest.mark.parametrize("mode", ["measured", "nominal"])
def test_control_law_and_invariants(rng, mode):
    prob = _problem()
    gains = _gains(prob, rng)
    plans = initial_plans(prob)
    tr = run_closed_loop(prob, gains, _noise(rng), plans, RuntimeOptions(replan_from=mode))
    for i, dyn in enumerate(prob.dyns, start=1):
        x = [dyn.x0]
        for t in range(N):
            x.append(dyn.A @ x[-1] + dyn.B @ tr.u[i][t] + tr.w[i][t])
        assert np.abs(np.array(x) - tr.x[i]).max() <= 1e-10
        for t in range(N):
            fb = gains.feedback(i, t, tr.w[i])
            assert np.allclose(tr.u[i][t], fb + tr.v[i][t], atol=1e-12)
    assert tr.disjointness_violations == 0
    assert tr.degradation_violations == 0


def test_nominal_mode_keeps_exact_decomposition(rng):
    prob = _problem()
    gains = _gains(prob, rng)
    tr = run_closed_loop(prob, gains, _noise(rng), None, RuntimeOptions(replan_from="nominal"))
    for i, dyn in enumerate(prob.dyns, start=1):
        e = error_trajectory(build_stacked(dyn, N), gains.mats[i - 1], tr.w[i])
        assert np.abs(tr.x[i][1:] - tr.z[i][1:] - e).max() <= 1e-10


def test_collaboration_is_repaired(rng):
    prob = _problem()
    plans = initial_plans(prob)
    k = len(prob.spec.cliques) - 1
    start = prob.spec.cliques[k].robustness(aggregate({i: p.z[i] for i, p in plans.items()},
                                                      prob.spec.cliques[k].clique))
    assert start < 0
    tr = run_closed_loop(prob, FeedbackGains.zeros(prob.dyns, N), [np.zeros((N, 1))] * 2, plans)
    assert tr.clique_robustness["(1,2)"] >= 0.0
    assert tr.satisfied and not tr.flagged


def test_trace_is_deterministic(rng):
    prob = _problem()
    gains = _gains(prob, rng)
    w = _noise(rng)
    a = trace_lines(run_closed_loop(prob, gains, w))
    b = trace_lines(run_closed_loop(prob, gains, w))
    assert a == b
    recs = [json.loads(s) for s in a]
    assert [r["t"] for r in recs[:-1]] == list(range(1, N + 1))
    assert recs[-1]["type"] == "summary"


def test_replan_option_validation():
    with pytest.raises(ValueError):
        RuntimeOptions(replan_from="sideways")
