"""Linear multi-agent dynamics, cliques and the nominal/error decomposition.

Agents are indexed from 1 (as in clique member lists); Python sequences of
per-agent objects are indexed from 0, so agent ``i`` lives at ``[i - 1]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .stl import StlFormula


def agent_signal(i: int) -> str:
    """Signal name used for agent ``i`` in formulas."""
    return f"x{i}"


@dataclass
class AgentDynamics:
    """``x(t+1) = A x(t) + B u(t) + w(t)`` with known ``x(0)``."""

    A: np.ndarray
    B: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim < 2:
            self.B = self.B.reshape(self.A.shape[0], -1)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n:
            raise ValueError(f"B has {self.B.shape[0]} rows, A is {n}x{n}")
        if self.x0.size != n:
            raise ValueError(f"x0 has {self.x0.size} entries, state dimension is {n}")
        if not is_stabilizable(self.A, self.B):
            warnings.warn("(A, B) is not stabilizable", RuntimeWarning, stacklevel=2)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def is_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    """PBH test restricted to eigenvalues on or outside the unit circle."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - tol:
            M = np.hstack([lam * np.eye(n) - A, B])
            if np.linalg.matrix_rank(M, tol=1e-8) < n:
                return False
    return True


@dataclass(frozen=True)
class StackedOperators:
    """Block-Toeplitz maps from ``w(0:N-1)`` / ``u(0:N-1)`` to ``e(1:N)``."""

    A_stack: np.ndarray   # (N n, N n), block (r, c) = A^(r-c) for r >= c
    B_stack: np.ndarray   # A_stack (I_N kron B)
    N: int
    n: int
    m: int


def build_stacked(dyn: AgentDynamics, N: int) -> StackedOperators:
    if N < 1:
        raise ValueError("horizon must be at least 1")
    n, m = dyn.n, dyn.m
    powers = [np.eye(n)]
    for _ in range(N - 1):
        powers.append(dyn.A @ powers[-1])
    A_stack = np.zeros((N * n, N * n))
    for r in range(N):
        for c in range(r + 1):
            A_stack[r * n:(r + 1) * n, c * n:(c + 1) * n] = powers[r - c]
    B_stack = A_stack @ np.kron(np.eye(N), dyn.B)
    return StackedOperators(A_stack, B_stack, N, n, m)


@dataclass
class FeedbackGains:
    """Per-agent stacked disturbance-feedback matrices.

    ``mats[i - 1]`` has shape ``(N m_i, N n_i)``; block ``(t, k)`` is
    ``Gamma_i^{t,k}`` and must vanish for ``k >= t``.
    """

    mats: list[np.ndarray]
    N: int
    dims: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.mats = [np.asarray(G, dtype=float) for G in self.mats]
        if not self.dims:
            self.dims = [(G.shape[0] // self.N, G.shape[1] // self.N) for G in self.mats]
        for i, (G, (m, n)) in enumerate(zip(self.mats, self.dims), start=1):
            if G.shape != (self.N * m, self.N * n):
                raise ValueError(f"agent {i}: gain shape {G.shape} != {(self.N * m, self.N * n)}")
            if not is_causal(G, m, n, self.N):
                raise ValueError(f"agent {i}: gains are not strictly block-lower-triangular")

    @classmethod
    def zeros(cls, dyns: Sequence[AgentDynamics], N: int) -> "FeedbackGains":
        return cls([np.zeros((N * d.m, N * d.n)) for d in dyns], N,
                   [(d.m, d.n) for d in dyns])

    def block(self, i: int, t: int, k: int) -> np.ndarray:
        m, n = self.dims[i - 1]
        return self.mats[i - 1][t * m:(t + 1) * m, k * n:(k + 1) * n]

    def feedback(self, i: int, t: int, w_hist: np.ndarray) -> np.ndarray:
        """``sum_{k<t} Gamma_i^{t,k} w_i(k)`` from a ``(>=t, n)`` history."""
        m, n = self.dims[i - 1]
        if t == 0:
            return np.zeros(m)
        row = self.mats[i - 1][t * m:(t + 1) * m, : t * n]
        return row @ np.asarray(w_hist[:t], dtype=float).reshape(-1)


def causal_mask(m: int, n: int, N: int) -> np.ndarray:
    """Boolean mask of the free (strictly lower) entries of a gain matrix."""
    blocks = np.tril(np.ones((N, N), dtype=bool), k=-1)
    return np.kron(blocks, np.ones((m, n), dtype=bool))


def is_causal(G: np.ndarray, m: int, n: int, N: int) -> bool:
    return not np.any(G[~causal_mask(m, n, N)] != 0.0)


def error_trajectory(ops: StackedOperators, gamma: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``e(1:N) = (A_stack + B_stack Gamma) w(0:N-1)``.

    ``w`` is ``(N, n)`` or a batch ``(S, N, n)``; the result has the same
    leading shape.
    """
    gamma = np.asarray(gamma, dtype=float)
    if not is_causal(gamma, ops.m, ops.n, ops.N):
        raise ValueError("gains are not causal")
    w = np.asarray(w, dtype=float)
    batch = w.ndim == 3
    W = w.reshape(-1, ops.N * ops.n) if batch else w.reshape(1, ops.N * ops.n)
    if W.shape[1] != ops.N * ops.n:
        raise ValueError(f"disturbance has shape {w.shape}, expected (.., {ops.N}, {ops.n})")
    Mop = ops.A_stack + ops.B_stack @ gamma
    E = W @ Mop.T
    return E.reshape(-1, ops.N, ops.n) if batch else E.reshape(ops.N, ops.n)


def error_operator(ops: StackedOperators, gamma: np.ndarray) -> np.ndarray:
    return ops.A_stack + ops.B_stack @ np.asarray(gamma, dtype=float)


def nominal_trajectory(dyn: AgentDynamics, v: np.ndarray, z0: np.ndarray | None = None) -> np.ndarray:
    """Rollout ``z(t+1) = A z(t) + B v(t)`` from ``z(0) = x0``; returns ``(N+1, n)``."""
    v = np.asarray(v, dtype=float).reshape(-1, dyn.m)
    z = np.empty((v.shape[0] + 1, dyn.n))
    z[0] = dyn.x0 if z0 is None else z0
    for t in range(v.shape[0]):
        z[t + 1] = dyn.A @ z[t] + dyn.B @ v[t]
    return z


def closed_loop_states(dyn: AgentDynamics, gains: FeedbackGains, i: int,
                       v: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Simulate the true system under ``u(t) = sum_k Gamma^{t,k} w(k) + v(t)``.

    Returns states ``(N+1, n)`` and applied inputs ``(N, m)``.
    """
    v = np.asarray(v, dtype=float).reshape(-1, dyn.m)
    w = np.asarray(w, dtype=float).reshape(-1, dyn.n)
    N = v.shape[0]
    x = np.empty((N + 1, dyn.n))
    u = np.empty((N, dyn.m))
    x[0] = dyn.x0
    for t in range(N):
        u[t] = gains.feedback(i, t, w) + v[t]
        x[t + 1] = dyn.A @ x[t] + dyn.B @ u[t] + w[t]
    return x, u


@dataclass
class CliqueSpec:
    """A group of agents sharing one conjunct of the global formula."""

    members: tuple[int, ...]
    formula: StlFormula | None = None
    name: str = ""

    def __post_init__(self):
        members = tuple(int(i) for i in self.members)
        if not members:
            raise ValueError("clique needs at least one member")
        if len(set(members)) != len(members):
            raise ValueError(f"clique members must be distinct: {members}")
        if list(members) != sorted(members):
            raise ValueError(f"clique members must be sorted ascending: {members}")
        self.members = members
        if not self.name:
            self.name = "(" + ",".join(map(str, members)) + ")"
        if self.formula is not None:
            expected = [agent_signal(i) for i in members]
            if list(self.formula.layout) != expected:
                raise ValueError(
                    f"clique {self.name}: formula layout {list(self.formula.layout)} "
                    f"!= members {expected}"
                )

    @property
    def is_individual(self) -> bool:
        return len(self.members) == 1

    def __contains__(self, i: int) -> bool:
        return i in self.members


def aggregate(per_agent: Mapping[int, np.ndarray] | Sequence[np.ndarray],
              clique: CliqueSpec | Sequence[int]) -> np.ndarray:
    """Concatenate member vectors/trajectories (last axis) in member order."""
    members = clique.members if isinstance(clique, CliqueSpec) else tuple(clique)
    if list(members) != sorted(set(members)):
        raise ValueError(f"clique members must be sorted and distinct: {members}")
    parts = []
    for i in members:
        try:
            parts.append(np.asarray(per_agent[i] if isinstance(per_agent, Mapping)
                                    else per_agent[i - 1], dtype=float))
        except (KeyError, IndexError):
            raise KeyError(f"missing trajectory for member {i}") from None
    lengths = {p.shape[:-1] for p in parts}
    if len(lengths) > 1:
        raise ValueError(f"member trajectories differ in length: {sorted(lengths)}")
    return np.concatenate(parts, axis=-1)


def trace_norm(e: np.ndarray, norm: str = "inf") -> float | np.ndarray:
    """``max_t ||e(t)||`` over the second-to-last axis (batched)."""
    e = np.asarray(e, dtype=float)
    ord_ = np.inf if norm in ("inf", np.inf) else 2
    return np.linalg.norm(e, ord=ord_, axis=-1).max(axis=-1)


@dataclass
class InteractionGraph:
    M: int
    cliques: list[CliqueSpec]
    edges: list[tuple[int, int, int]]          # (i, j, clique index), i <= j
    cliques_of: dict[int, list[int]]           # T_i as indices into ``cliques``

    def neighbors(self, i: int) -> set[int]:
        """All agents sharing at least one clique with ``i`` (including ``i``)."""
        out = set()
        for c in self.cliques_of[i]:
            out.update(self.cliques[c].members)
        return out


def build_interaction_graph(cliques: Sequence[CliqueSpec], M: int) -> InteractionGraph:
    cliques = list(cliques)
    for c in cliques:
        bad = [i for i in c.members if not 1 <= i <= M]
        if bad:
            raise ValueError(f"clique {c.name} has members outside 1..{M}: {bad}")
    edges = []
    cliques_of: dict[int, list[int]] = {i: [] for i in range(1, M + 1)}
    for k, c in enumerate(cliques):
        for a_pos, i in enumerate(c.members):
            cliques_of[i].append(k)
            if len(c.members) == 1:
                edges.append((i, i, k))
            for j in c.members[a_pos + 1:]:
                edges.append((i, j, k))
    return InteractionGraph(M, cliques, edges, cliques_of)
