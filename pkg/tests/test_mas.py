import numpy as np
import pytest

from cpstl.mas import (
    AgentDynamics, CliqueSpec, FeedbackGains, aggregate, build_interaction_graph, build_stacked,
    causal_mask, closed_loop_states, error_trajectory, is_stabilizable, nominal_trajectory,
    trace_norm,
)


def random_system(rng, n=None, m=None):
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 3))
    A = rng.normal(size=(n, n))
    A /= max(1.0, np.abs(np.linalg.eigvals(A)).max())
    return AgentDynamics(A, rng.normal(size=(n, m)), rng.normal(size=n))


def random_gains(rng, dyn, N):
    G = rng.normal(scale=0.5, size=(N * dyn.m, N * dyn.n))
    G[~causal_mask(dyn.m, dyn.n, N)] = 0.0
    return G


def recursive_error(dyn, G, w):
    """e(t+1) = A e(t) + B sum_{k<t} Gamma^{t,k} w(k) + w(t), e(0) = 0."""
    N, n, m = w.shape[0], dyn.n, dyn.m
    e = np.zeros(n)
    out = []
    for t in range(N):
        fb = np.zeros(m)
        for k in range(t):
            fb += G[t * m:(t + 1) * m, k * n:(k + 1) * n] @ w[k]
        e = dyn.A @ e + dyn.B @ fb + w[t]
        out.append(e)
    return np.array(out)


# ---------------------------------------------------------------- stacked operators

def test_stacked_scalar_example():
    ops = build_stacked(AgentDynamics([[2.0]], [[1.0]], [0.0]), 2)
    assert ops.A_stack.tolist() == [[1.0, 0.0], [2.0, 1.0]]


def test_stacked_identity_example():
    ops = build_stacked(AgentDynamics(np.eye(2), np.eye(2), np.zeros(2)), 3)
    assert np.array_equal(ops.A_stack, np.kron(np.tril(np.ones((3, 3))), np.eye(2)))


def test_stacked_block_is_matrix_power(rng):
    dyn = random_system(rng, n=2, m=1)
    ops = build_stacked(dyn, 4)
    A3 = dyn.A @ dyn.A @ dyn.A
    assert np.allclose(ops.A_stack[6:8, 0:2], A3, atol=1e-14)
    assert np.allclose(ops.B_stack, ops.A_stack @ np.kron(np.eye(4), dyn.B))


def test_build_stacked_rejects_zero_horizon():
    with pytest.raises(ValueError):
        build_stacked(AgentDynamics([[1.0]], [[1.0]], [0.0]), 0)


# ---------------------------------------------------------------- error and nominal

def test_error_pure_accumulation():
    ops = build_stacked(AgentDynamics([[1.0]], [[1.0]], [0.0]), 2)
    e = error_trajectory(ops, np.zeros((2, 2)), np.array([[0.3], [-0.7]]))
    assert e.ravel() == pytest.approx([0.3, -0.4])


def test_error_deadbeat_gain():
    ops = build_stacked(AgentDynamics([[1.0]], [[1.0]], [0.0]), 2)
    G = np.array([[0.0, 0.0], [-1.0, 0.0]])
    e = error_trajectory(ops, G, np.array([[0.3], [-0.7]]))
    assert e.ravel() == pytest.approx([0.3, -0.7])


def test_error_rejects_noncausal():
    ops = build_stacked(AgentDynamics([[1.0]], [[1.0]], [0.0]), 2)
    with pytest.raises(ValueError):
        error_trajectory(ops, np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        FeedbackGains([np.eye(2)], 2)


def test_stacked_matches_recursion(rng):
    for _ in range(200):
        dyn = random_system(rng)
        N = int(rng.integers(1, 8))
        G = random_gains(rng, dyn, N)
        w = rng.normal(size=(N, dyn.n))
        e = error_trajectory(build_stacked(dyn, N), G, w)
        assert np.abs(e - recursive_error(dyn, G, w)).max() <= 1e-12


def test_causality(rng):
    dyn = random_system(rng, 2, 2)
    N = 6
    G = random_gains(rng, dyn, N)
    ops = build_stacked(dyn, N)
    w = rng.normal(size=(N, 2))
    e = error_trajectory(ops, G, w)
    for t in range(1, N + 1):
        w2 = w.copy()
        w2[t:] = 0.0
        # e(t) is row t-1 and depends on w(0..t-1) only
        assert np.allclose(error_trajectory(ops, G, w2)[t - 1], e[t - 1], atol=1e-14)


def test_nominal_examples():
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    assert nominal_trajectory(dyn, [1.0, 1.0]).ravel().tolist() == [0.0, 1.0, 2.0]
    dyn2 = AgentDynamics([[0.5, 1.0], [0.0, 0.9]], np.eye(2), [1.0, -1.0])
    z = nominal_trajectory(dyn2, np.zeros((4, 2)))
    for t in range(5):
        assert np.allclose(z[t], np.linalg.matrix_power(dyn2.A, t) @ dyn2.x0)


def test_nominal_superposition(rng):
    dyn = random_system(rng, 3, 2)
    v1, v2 = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    z0 = nominal_trajectory(dyn, np.zeros((5, 2)))
    lhs = nominal_trajectory(dyn, v1 + v2) - z0
    rhs = (nominal_trajectory(dyn, v1) - z0) + (nominal_trajectory(dyn, v2) - z0)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_decomposition_exact(rng):
    for _ in range(200):
        dyn = random_system(rng)
        N = int(rng.integers(1, 8))
        gains = FeedbackGains([random_gains(rng, dyn, N)], N)
        v = rng.normal(size=(N, dyn.m))
        w = rng.normal(size=(N, dyn.n))
        x, _ = closed_loop_states(dyn, gains, 1, v, w)
        z = nominal_trajectory(dyn, v)
        e = error_trajectory(build_stacked(dyn, N), gains.mats[0], w)
        assert np.abs(x[0] - z[0]).max() == 0.0
        assert np.abs(x[1:] - (z[1:] + e)).max() <= 1e-10


# ---------------------------------------------------------------- cliques

def test_aggregate_and_ordering():
    assert aggregate({1: np.array([1.0]), 2: np.array([2.0])}, (1, 2)).tolist() == [1.0, 2.0]
    with pytest.raises(ValueError):
        CliqueSpec((2, 1))
    with pytest.raises(ValueError):
        aggregate({1: np.zeros(1), 2: np.zeros(1)}, (2, 1))
    with pytest.raises(KeyError):
        aggregate({1: np.zeros(1)}, (1, 2))


def test_clique_norm_is_max_of_members(rng):
    e1, e2 = rng.normal(size=(7, 2)), rng.normal(size=(7, 3))
    joint = aggregate({1: e1, 2: e2}, (1, 2))
    assert trace_norm(joint) == max(trace_norm(e1), trace_norm(e2))


def test_interaction_graph_small():
    g = build_interaction_graph([CliqueSpec((1,)), CliqueSpec((1, 2))], 2)
    assert g.cliques_of == {1: [0, 1], 2: [1]}
    assert (1, 1, 0) in g.edges and (1, 2, 1) in g.edges


def test_interaction_graph_ten_agents():
    cl = [CliqueSpec((i,)) for i in range(1, 11)]
    cl += [CliqueSpec(m) for m in [(1, 2, 3), (1, 5), (4, 5), (5, 6), tuple(range(1, 11))]]
    g = build_interaction_graph(cl, 10)
    assert {cl[k].name for k in g.cliques_of[5]} == {"(5)", "(1,5)", "(4,5)", "(5,6)",
                                                     "(1,2,3,4,5,6,7,8,9,10)"}
    assert all(g.cliques_of[i] for i in range(1, 11))


def test_stabilizability_warning():
    assert is_stabilizable(np.eye(2), np.eye(2))
    assert not is_stabilizable(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]))
    with pytest.warns(RuntimeWarning):
        AgentDynamics(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]), np.zeros(2))
