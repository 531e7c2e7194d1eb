"""Conformal quantiles, CVaR utilities and the gain/weight training LPs.

Training minimizes an empirical CVaR of the nonconformity score
``E = max_nu C_nu ||e_nu||`` over the feedback gains and clique weights by
alternating two linear programs.  Under the inf-norm the score only depends
on the per-agent weights ``c_i = max_{nu containing i} C_nu``, which keeps
the gain LP separable across agents apart from the shared epigraph variables.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .datasets import DisturbanceDataset, ErrorTrajectorySet, build_error_set
from .mas import AgentDynamics, CliqueSpec, FeedbackGains, build_stacked, causal_mask


# interior point scales far better than dual simplex on the gain LP
GAIN_LP_METHOD = "highs-ipm"


class LPError(RuntimeError):
    """The LP solver failed or reported an unexpected status."""


class CalibrationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scalar statistics

def _check_level(theta: float) -> None:
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")


def _ceil(x: float) -> int:
    # tolerate representation error, e.g. 20 * 0.95 = 19.000000000000004
    return math.ceil(x - 1e-9)


def conformal_index(k: int, theta: float) -> int:
    _check_level(theta)
    return _ceil((k + 1) * (1.0 - theta))


def conformal_quantile(scores: Sequence[float], theta: float) -> float:
    """p-th smallest score, ``p = ceil((k+1)(1-theta))``; ``inf`` if ``p > k``."""
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    if s.size == 0:
        raise ValueError("need at least one score")
    p = conformal_index(s.size, theta)
    return float(s[p - 1]) if p <= s.size else math.inf


def pac_adjusted_level(theta: float, beta: float, k: int) -> float:
    """Miscoverage level to calibrate at so that coverage >= 1-theta w.p. >= 1-beta."""
    _check_level(theta)
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    adj = theta - math.sqrt(math.log(1.0 / beta) / (2.0 * k))
    if adj <= 0.0:
        raise ValueError(
            f"PAC adjustment exceeds theta (theta={theta}, beta={beta}, k={k}); "
            "use more calibration samples or a larger beta"
        )
    return adj


def empirical_var(scores: Sequence[float], theta: float) -> float:
    """Empirical (1-theta)-quantile: the ``ceil(n(1-theta))``-th smallest value."""
    _check_level(theta)
    s = np.sort(np.asarray(scores, dtype=float).reshape(-1))
    return float(s[max(_ceil(s.size * (1.0 - theta)), 1) - 1])


def empirical_cvar(scores: Sequence[float], theta: float) -> float:
    """``min_eta eta + sum(s - eta)_+ / (n theta)``, attained at the VaR."""
    _check_level(theta)
    s = np.asarray(scores, dtype=float).reshape(-1)
    eta = empirical_var(s, theta)
    return float(eta + np.maximum(s - eta, 0.0).sum() / (s.size * theta))


@dataclass(frozen=True)
class TrainingLevel:
    theta_hat: float
    q_c: float            # CVaR scaling constant of the LP objective
    n_train: int
    clamped: bool

    @property
    def tail_fraction(self) -> float:
        """Tail mass ``q_c / n`` at which the LP objective is an empirical CVaR."""
        return self.q_c / self.n_train


def training_level(n_train: int, theta: float) -> TrainingLevel:
    """``theta_hat = (1 + 1/(n-1))(1-theta)``, ``q_c = (n-1)(1-theta_hat)``."""
    _check_level(theta)
    if n_train < 2:
        raise ValueError("need at least two training samples")
    th = (1.0 + 1.0 / (n_train - 1)) * (1.0 - theta)
    clamped = th >= 1.0
    if clamped:
        th = (n_train - 1) / n_train
        warnings.warn(
            f"training quantile level exceeds 1 for {n_train} samples; clamped to {th:.6g}",
            RuntimeWarning, stacklevel=2,
        )
    return TrainingLevel(th, (n_train - 1) * (1.0 - th), n_train, clamped)


# ---------------------------------------------------------------------------
# scores and weights

def check_weights(C: Sequence[float], n_cliques: int | None = None, tol: float = 1e-9) -> np.ndarray:
    C = np.asarray(C, dtype=float).reshape(-1)
    if n_cliques is not None and C.size != n_cliques:
        raise ValueError(f"{C.size} weights for {n_cliques} cliques")
    if np.any(C < -tol) or np.any(C > 1 + tol) or abs(C.sum() - 1.0) > 1e-7:
        raise ValueError(f"weights must lie on the simplex, got {C.tolist()}")
    return np.clip(C, 0.0, 1.0)


def score_dataset(errs: ErrorTrajectorySet | np.ndarray, C: Sequence[float]) -> np.ndarray:
    """Nonconformity scores ``max_nu C_nu ||e_nu||`` per sample."""
    norms = errs.norms if isinstance(errs, ErrorTrajectorySet) else np.asarray(errs, dtype=float)
    C = check_weights(C, norms.shape[1])
    return (norms * C[None, :]).max(axis=1)


def agent_weights(C: Sequence[float], cliques: Sequence[CliqueSpec], M: int) -> np.ndarray:
    """``c_i = max over cliques containing i of C_nu`` (0 if none)."""
    c = np.zeros(M)
    for w, cl in zip(C, cliques):
        for i in cl.members:
            c[i - 1] = max(c[i - 1], w)
    return c


def initial_weights(cliques: Sequence[CliqueSpec], M: int) -> np.ndarray:
    """``1/M`` on each singleton clique, 0 on collaborative ones."""
    C = np.array([1.0 / M if cl.is_individual else 0.0 for cl in cliques])
    if C.sum() <= 0.0:
        C = np.full(len(cliques), 1.0 / len(cliques))
    return C / C.sum()


# ---------------------------------------------------------------------------
# LPs

@dataclass(frozen=True)
class GainStructure:
    """Parameterization of the causal gains searched by the gain LP.

    ``full`` leaves every strictly-lower block free.  ``toeplitz`` ties
    ``Gamma^{t,k}`` to the lag ``t - k`` (time-invariant feedback).  A
    ``bandwidth`` keeps only lags ``1..bandwidth``.  Restricted forms have far
    fewer parameters than training samples, which keeps the calibrated
    regions close to the training ones.
    """

    kind: str = "full"
    bandwidth: int | None = None

    def __post_init__(self):
        if self.kind not in ("full", "toeplitz"):
            raise ValueError(f"unknown gain structure {self.kind!r}")
        if self.bandwidth is not None and self.bandwidth < 0:
            raise ValueError("bandwidth must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}


@dataclass
class TrainingData:
    """Training disturbances and system data shared by both LPs."""

    dyns: list[AgentDynamics]
    w: list[np.ndarray]               # per agent (S, N, n)
    cliques: list[CliqueSpec]
    level: TrainingLevel
    norm: str = "inf"
    structure: GainStructure = field(default_factory=GainStructure)

    @property
    def M(self) -> int:
        return len(self.dyns)

    @property
    def N(self) -> int:
        return self.w[0].shape[1]

    @property
    def S(self) -> int:
        return self.w[0].shape[0]

    @classmethod
    def from_dataset(cls, ds: DisturbanceDataset, indices, dyns, cliques, theta: float,
                     norm: str = "inf", structure: GainStructure | None = None) -> "TrainingData":
        idx = np.asarray(indices, dtype=int)
        return cls(list(dyns), [s[idx] for s in ds.samples], list(cliques),
                   training_level(idx.size, theta), norm, structure or GainStructure())

    def error_set(self, gains: FeedbackGains, keep: bool = False) -> ErrorTrajectorySet:
        ds = DisturbanceDataset(self.w, "training")
        ops = [build_stacked(d, self.N) for d in self.dyns]
        return build_error_set(ds, np.arange(self.S), ops, gains, self.cliques, self.norm, keep)


@dataclass
class LPResult:
    objective: float
    status: str
    iterations: int


def _run_lp(c, A_ub, b_ub, A_eq, b_eq, bounds, method="highs") -> "scipy.optimize.OptimizeResult":
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method=method,
                  options={"primal_feasibility_tolerance": 1e-9,
                           "dual_feasibility_tolerance": 1e-9})
    if res.status == 2:
        raise LPError(f"LP infeasible: {res.message}")
    if res.status == 3:
        raise LPError(f"LP unbounded: {res.message}")
    if res.status != 0:
        raise LPError(f"LP solver failed (status {res.status}): {res.message}")
    return res


def _gain_layout(m: int, n: int, N: int, structure: GainStructure = GainStructure()):
    """Free gain entries ``(t, k, j, d)`` and the LP parameter each maps to."""
    bw = N if structure.bandwidth is None else structure.bandwidth
    t, k = [], []
    for tt in range(1, N):
        for kk in range(max(0, tt - bw), tt):
            t.append(tt)
            k.append(kk)
    t, k = np.asarray(t, dtype=int), np.asarray(k, dtype=int)
    jj, dd = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    jj, dd = jj.ravel(), dd.ravel()
    lt, lk = np.repeat(t, m * n), np.repeat(k, m * n)
    lj, ld = np.tile(jj, t.size), np.tile(dd, t.size)
    if structure.kind == "full":
        param = np.arange(lt.size)
    else:
        param = (lt - lk - 1) * m * n + lj * n + ld
    n_params = int(param.max()) + 1 if param.size else 0
    return lt, lk, lj, ld, param, n_params


def solve_P_of_C(C: Sequence[float], data: TrainingData) -> tuple[FeedbackGains, LPResult]:
    """Optimal causal gains for fixed clique weights (inf-norm scores).

    Per sample ``s`` and agent ``i`` the LP carries the error recursion
    ``e(1) = w(0)``, ``e(t+1) = A e(t) + B u(t) + w(t)`` with
    ``u(t) = sum_{k<t} Gamma^{t,k} w(k)``, the epigraph
    ``Y_s >= c_i |e_d(t)|`` and the CVaR slack ``p_s >= Y_s - eta``.
    """
    if data.norm != "inf":
        return _subgradient_P_of_C(C, data)
    C = check_weights(C, len(data.cliques))
    S, N, M = data.S, data.N, data.M
    c_agent = agent_weights(C, data.cliques, M)
    q_c = data.level.q_c

    n_base = 1 + 2 * S       # eta, Y, p
    col = n_base
    blocks = []
    for i, dyn in enumerate(data.dyns):
        if c_agent[i] <= 0.0:
            blocks.append(None)
            continue
        m, n = dyn.m, dyn.n
        lay = _gain_layout(m, n, N, data.structure)
        ng = lay[5]
        g0 = col
        u0 = g0 + ng
        e0 = u0 + S * (N - 1) * m
        col = e0 + S * N * n
        blocks.append((g0, u0, e0, lay))
    nvar = col

    eq_r, eq_c, eq_v, eq_b = [], [], [], []
    ub_r, ub_c, ub_v = [], [], []
    n_eq = 0
    n_ub = 0
    s_idx = np.arange(S)
    for i, (dyn, blk) in enumerate(zip(data.dyns, blocks)):
        if blk is None:
            continue
        g0, u0, e0, (lt, lk, lj, ld, param, _) = blk
        m, n = dyn.m, dyn.n
        w = data.w[i]
        uidx = lambda s, t, j: u0 + (s * (N - 1) + (t - 1)) * m + j      # noqa: E731
        eidx = lambda s, t, d: e0 + (s * N + (t - 1)) * n + d           # noqa: E731

        # u(t) - sum Gamma w = 0, rows ordered (s, t, j)
        if N > 1:
            rows_u = n_eq + (s_idx[:, None] * (N - 1) + (lt[None, :] - 1)) * m + lj[None, :]
            eq_r.append(rows_u.ravel())
            eq_c.append(np.broadcast_to(g0 + param, rows_u.shape).ravel())
            eq_v.append(-w[:, lk, ld].ravel())
            n_u = S * (N - 1) * m
            ss, tt, jj = np.meshgrid(s_idx, np.arange(1, N), np.arange(m), indexing="ij")
            eq_r.append(n_eq + np.arange(n_u))
            eq_c.append(uidx(ss, tt, jj).ravel())
            eq_v.append(np.ones(n_u))
            eq_b.append(np.zeros(n_u))
            n_eq += n_u

        # e(1) = w(0)
        ss, dd = np.meshgrid(s_idx, np.arange(n), indexing="ij")
        eq_r.append(n_eq + np.arange(S * n))
        eq_c.append(eidx(ss, 1, dd).ravel())
        eq_v.append(np.ones(S * n))
        eq_b.append(w[:, 0, :].ravel())
        n_eq += S * n

        # e(t+1) - A e(t) - B u(t) = w(t), rows ordered (s, t, d)
        if N > 1:
            ss, tt, dd = np.meshgrid(s_idx, np.arange(1, N), np.arange(n), indexing="ij")
            rows = n_eq + np.arange(ss.size).reshape(ss.shape)
            eq_r.append(rows.ravel())
            eq_c.append(eidx(ss, tt + 1, dd).ravel())
            eq_v.append(np.ones(ss.size))
            for d2 in range(n):
                a = dyn.A[dd, d2]
                nz = a != 0.0
                eq_r.append(rows[nz])
                eq_c.append(eidx(ss, tt, d2)[nz])
                eq_v.append(-a[nz])
            for j in range(m):
                b = dyn.B[dd, j]
                nz = b != 0.0
                eq_r.append(rows[nz])
                eq_c.append(uidx(ss, tt, j)[nz])
                eq_v.append(-b[nz])
            eq_b.append(w[:, 1:, :].ravel())
            n_eq += ss.size

        # +-c e - Y <= 0
        ss, tt, dd = np.meshgrid(s_idx, np.arange(1, N + 1), np.arange(n), indexing="ij")
        cnt = ss.size
        ecols = eidx(ss, tt, dd).ravel()
        ycols = 1 + ss.ravel()
        for sign in (1.0, -1.0):
            rows = n_ub + np.arange(cnt)
            ub_r += [rows, rows]
            ub_c += [ecols, ycols]
            ub_v += [np.full(cnt, sign * c_agent[i]), -np.ones(cnt)]
            n_ub += cnt

    # Y - eta - p <= 0
    rows = n_ub + s_idx
    ub_r += [rows, rows, rows]
    ub_c += [1 + s_idx, np.zeros(S, dtype=int), 1 + S + s_idx]
    ub_v += [np.ones(S), -np.ones(S), -np.ones(S)]
    n_ub += S

    A_ub = sp.csr_matrix((np.concatenate(ub_v), (np.concatenate(ub_r), np.concatenate(ub_c))),
                         shape=(n_ub, nvar))
    A_eq = b_eq = None
    if n_eq:
        A_eq = sp.csr_matrix((np.concatenate(eq_v), (np.concatenate(eq_r), np.concatenate(eq_c))),
                             shape=(n_eq, nvar))
        b_eq = np.concatenate(eq_b)
    cost = np.zeros(nvar)
    cost[0] = 1.0
    cost[1 + S:1 + 2 * S] = 1.0 / q_c
    bounds = np.full((nvar, 2), np.nan)
    bounds[:, 0] = -np.inf
    bounds[:, 1] = np.inf
    bounds[1 + S:1 + 2 * S, 0] = 0.0
    res = _run_lp(cost, A_ub, np.zeros(n_ub), A_eq, b_eq, bounds, GAIN_LP_METHOD)

    mats = []
    for dyn, blk in zip(data.dyns, blocks):
        G = np.zeros((N * dyn.m, N * dyn.n))
        if blk is not None:
            g0, _, _, (lt, lk, lj, ld, param, _) = blk
            G[lt * dyn.m + lj, lk * dyn.n + ld] = res.x[g0 + param]
        mats.append(G)
    gains = FeedbackGains(mats, N, [(d.m, d.n) for d in data.dyns])
    return gains, LPResult(float(res.fun), "optimal", int(getattr(res, "nit", 0)))


def _subgradient_P_of_C(C, data: TrainingData, iters: int = 300) -> tuple[FeedbackGains, LPResult]:
    """2-norm scores: projected subgradient descent on the gains from zero.

    The 2-norm epigraph is second-order-cone representable, which the LP
    path does not cover; this fallback returns the best iterate found.
    """
    C = check_weights(C, len(data.cliques))
    N = data.N
    dims = [(d.m, d.n) for d in data.dyns]
    ops = [build_stacked(d, N) for d in data.dyns]
    masks = [causal_mask(m, n, N) for m, n in dims]
    mats = [np.zeros((N * m, N * n)) for m, n in dims]
    tail = data.level.tail_fraction

    def evaluate(mats):
        gains = FeedbackGains([G * mk for G, mk in zip(mats, masks)], N, dims)
        errs = data.error_set(gains, keep=True)
        return gains, errs, score_dataset(errs, C)

    best = None
    step0 = 0.1
    for it in range(iters):
        gains, errs, scores = evaluate(mats)
        val = empirical_cvar(scores, tail)
        if best is None or val < best[0]:
            best = (val, gains)
        eta = empirical_var(scores, tail)
        active = np.nonzero(scores >= eta)[0]
        grads = [np.zeros_like(G) for G in mats]
        for s in active:
            # subgradient of the winning clique/agent/time norm at sample s
            weighted = errs.norms[s] * C
            nu = int(np.argmax(weighted))
            members = data.cliques[nu].members
            stacked = np.concatenate([errs.trajectories[i - 1][s] for i in members], axis=-1)
            t = int(np.argmax(np.linalg.norm(stacked, axis=-1)))
            nrm = np.linalg.norm(stacked[t])
            if nrm == 0.0:
                continue
            off = 0
            for i in members:
                n = dims[i - 1][1]
                g_e = C[nu] * stacked[t, off:off + n] / nrm
                off += n
                op = ops[i - 1]
                row = op.B_stack[t * n:(t + 1) * n]      # d e(t+1) / d u
                w = data.w[i - 1][s].reshape(-1)
                grads[i - 1] += np.outer(row.T @ g_e, w) / (data.S * tail)
        step = step0 / math.sqrt(it + 1)
        mats = [(G - step * g) * mk for G, g, mk in zip(mats, grads, masks)]
    val, gains = best
    return gains, LPResult(float(val), "subgradient", iters)


def solve_P_of_Gamma(norms: np.ndarray | ErrorTrajectorySet, level: TrainingLevel) -> tuple[np.ndarray, LPResult]:
    """Optimal simplex weights for fixed per-sample clique norms."""
    nm = norms.norms if isinstance(norms, ErrorTrajectorySet) else np.asarray(norms, dtype=float)
    S, V = nm.shape
    q_c = level.q_c
    nvar = 1 + 2 * S + V
    cvar0 = 1 + 2 * S
    rows, cols, vals = [], [], []
    # C_nu norm - Y <= 0
    ss, vv = np.meshgrid(np.arange(S), np.arange(V), indexing="ij")
    r = (ss * V + vv).ravel()
    rows += [r, r]
    cols += [(cvar0 + vv).ravel(), (1 + ss).ravel()]
    vals += [nm.ravel(), -np.ones(S * V)]
    # Y - eta - p <= 0
    r2 = S * V + np.arange(S)
    rows += [r2, r2, r2]
    cols += [1 + np.arange(S), np.zeros(S, dtype=int), 1 + S + np.arange(S)]
    vals += [np.ones(S), -np.ones(S), -np.ones(S)]
    A_ub = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(S * V + S, nvar))
    A_eq = sp.csr_matrix((np.ones(V), (np.zeros(V, dtype=int), cvar0 + np.arange(V))),
                         shape=(1, nvar))
    cost = np.zeros(nvar)
    cost[0] = 1.0
    cost[1 + S:1 + 2 * S] = 1.0 / q_c
    bounds = [(None, None)] * (1 + S) + [(0, None)] * S + [(0.0, 1.0)] * V
    res = _run_lp(cost, A_ub, np.zeros(S * V + S), A_eq, np.ones(1), bounds)
    C = np.clip(res.x[cvar0:], 0.0, 1.0)
    C = C / C.sum()
    return C, LPResult(float(res.fun), "optimal", int(getattr(res, "nit", 0)))


@dataclass
class TrainingResult:
    C: np.ndarray
    gains: FeedbackGains
    trace: list[dict] = field(default_factory=list)
    level: TrainingLevel | None = None

    def to_dict(self) -> dict:
        return {
            "C": self.C.tolist(),
            "gains": [G.tolist() for G in self.gains.mats],
            "gain_dims": [list(d) for d in self.gains.dims],
            "N": self.gains.N,
            "objective_trace": self.trace,
            "theta_hat": None if self.level is None else self.level.theta_hat,
            "q_c": None if self.level is None else self.level.q_c,
            "n_train": None if self.level is None else self.level.n_train,
            "theta_hat_clamped": None if self.level is None else self.level.clamped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingResult":
        gains = FeedbackGains([np.asarray(G, dtype=float) for G in d["gains"]], int(d["N"]),
                              [tuple(x) for x in d["gain_dims"]])
        level = None
        if d.get("theta_hat") is not None:
            level = TrainingLevel(d["theta_hat"], d["q_c"], d["n_train"], d["theta_hat_clamped"])
        return cls(np.asarray(d["C"], dtype=float), gains, list(d["objective_trace"]), level)


def coordinate_descent(data: TrainingData, tau_max: int = 4,
                       C0: Sequence[float] | None = None) -> TrainingResult:
    """Alternate the gain LP and the weight LP ``tau_max`` times."""
    if tau_max < 1:
        raise ValueError("tau_max must be at least 1")
    C = initial_weights(data.cliques, data.M) if C0 is None else check_weights(C0, len(data.cliques))
    trace = []
    gains = None
    for tau in range(1, tau_max + 1):
        gains, r1 = solve_P_of_C(C, data)
        trace.append({"iteration": tau, "step": "gains", "objective": r1.objective})
        errs = data.error_set(gains)
        C, r2 = solve_P_of_Gamma(errs, data.level)
        trace.append({"iteration": tau, "step": "weights", "objective": r2.objective})
    return TrainingResult(C, gains, trace, data.level)


# ---------------------------------------------------------------------------
# calibration

@dataclass
class PredictionRegions:
    q: float
    radii: np.ndarray
    C: np.ndarray
    clique_names: list[str]
    theta: float
    theta_used: float
    k1: int
    pac_beta: float | None = None
    norm: str = "inf"

    @property
    def infinite(self) -> list[str]:
        return [n for n, r in zip(self.clique_names, self.radii) if not np.isfinite(r)]

    @property
    def confidence(self) -> float:
        return 1.0 - self.theta

    def to_dict(self) -> dict:
        return {
            "theta": self.theta,
            "theta_used": self.theta_used,
            "k1": self.k1,
            "q": self.q,
            "C": self.C.tolist(),
            "cliques": list(self.clique_names),
            "radii": {n: (float(r) if np.isfinite(r) else None)
                      for n, r in zip(self.clique_names, self.radii)},
            "infinite_radius": self.infinite,
            "pac": None if self.pac_beta is None else {
                "beta": self.pac_beta,
                "confidence": 1.0 - self.pac_beta,
                "adjusted_theta": self.theta_used,
            },
            "norm": self.norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionRegions":
        names = list(d.get("cliques") or d["radii"])
        radii = np.array([math.inf if d["radii"][n] is None else d["radii"][n] for n in names])
        pac = d.get("pac")
        return cls(float(d["q"]), radii, np.asarray(d["C"], dtype=float), names,
                   float(d["theta"]), float(d["theta_used"]), int(d["k1"]),
                   None if pac is None else float(pac["beta"]), d.get("norm", "inf"))


def radii_from(q: float, C: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(C > 0.0, q / np.where(C > 0.0, C, 1.0), math.inf)


def calibrate_regions(cal_errs: ErrorTrajectorySet, C: Sequence[float], theta: float,
                      pac_beta: float | None = None) -> PredictionRegions:
    """Conformal radius ``q / C_nu`` for every clique from calibration errors."""
    C = check_weights(C, cal_errs.norms.shape[1])
    k1 = cal_errs.norms.shape[0]
    theta_used = theta if pac_beta is None else pac_adjusted_level(theta, pac_beta, k1)
    scores = score_dataset(cal_errs, C)
    q = conformal_quantile(scores, theta_used)
    if not math.isfinite(q):
        need = math.ceil(1.0 / theta_used) - 1
        raise CalibrationError(
            f"calibration set of {k1} samples is too small for level {theta_used:.4g}; "
            f"need at least {need} samples"
        )
    radii = radii_from(q, C)
    if np.any(~np.isfinite(radii)):
        warnings.warn("zero clique weight gives an unbounded prediction region", RuntimeWarning,
                      stacklevel=2)
    return PredictionRegions(q, radii, C, list(cal_errs.clique_names), theta, theta_used, k1,
                             pac_beta, cal_errs.norm)
