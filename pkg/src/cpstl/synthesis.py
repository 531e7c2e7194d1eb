"""Tightened-robustness STL synthesis.

Nominal trajectories are affine in the free inputs, so every problem here is
"quadratic cost subject to a few robustness constraints".  We solve it with
an augmented Lagrangian on smoothed robustness: L-BFGS-B inner loops, an
annealed temperature, a certified lower bound in the last stage, and a final
check with the exact semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .mas import AgentDynamics, CliqueSpec, aggregate
from .stl import eval_robustness, lipschitz_constant, read_window, smooth_robustness
from .uq import PredictionRegions


class SynthesisError(RuntimeError):
    pass


class SynthesisInfeasible(SynthesisError):
    """No plan satisfying the tightened constraints was found."""

    def __init__(self, message: str, violations: Mapping[str, float] | None = None):
        super().__init__(message)
        self.violations = dict(violations or {})


# ---------------------------------------------------------------------------
# tightening

@dataclass
class TightenedClique:
    clique: CliqueSpec
    lipschitz: float
    radius: float
    margin: float

    @property
    def name(self) -> str:
        return self.clique.name

    @property
    def formula(self):
        return self.clique.formula

    def robustness(self, trace: np.ndarray) -> float:
        """Exact tightened robustness ``rho - margin`` of a clique trace."""
        return eval_robustness(self.formula, trace) - self.margin


@dataclass
class TightenedSpec:
    cliques: list[TightenedClique]
    M: int
    norm: str = "inf"

    def __post_init__(self):
        self.T = {i: [k for k, c in enumerate(self.cliques) if i in c.clique.members]
                  for i in range(1, self.M + 1)}

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cliques]

    @property
    def infinite(self) -> list[str]:
        return [c.name for c in self.cliques if not math.isfinite(c.margin)]

    def individual(self, i: int) -> list[int]:
        return [k for k in self.T[i] if self.cliques[k].clique.is_individual]

    def collaborative(self, i: int) -> list[int]:
        return [k for k in self.T[i] if not self.cliques[k].clique.is_individual]

    def clique_trace(self, k: int, traces: Mapping[int, np.ndarray]) -> np.ndarray:
        return aggregate(traces, self.cliques[k].clique)

    def robustness(self, traces: Mapping[int, np.ndarray]) -> dict[str, float]:
        return {c.name: c.robustness(self.clique_trace(k, traces))
                for k, c in enumerate(self.cliques)}

    def to_dict(self) -> dict:
        return {c.name: {"lipschitz": c.lipschitz,
                         "radius": c.radius if math.isfinite(c.radius) else None,
                         "margin": c.margin if math.isfinite(c.margin) else None}
                for c in self.cliques}


def tighten(cliques: Sequence[CliqueSpec], regions: PredictionRegions | Sequence[float],
            M: int, norm: str = "inf", allow_infinite: bool = False) -> TightenedSpec:
    """Margins ``L_nu * radius_nu`` for every clique formula."""
    radii = regions.radii if isinstance(regions, PredictionRegions) else np.asarray(regions, float)
    if len(radii) != len(cliques):
        raise ValueError(f"{len(radii)} radii for {len(cliques)} cliques")
    out = []
    for c, r in zip(cliques, radii):
        if c.formula is None:
            raise ValueError(f"clique {c.name} has no formula")
        L = lipschitz_constant(c.formula, norm)
        r = float(r)
        if not math.isfinite(r):
            if not allow_infinite:
                raise ValueError(f"clique {c.name} has an unbounded prediction region")
            m = 0.0 if L == 0.0 else math.inf
        else:
            m = L * r
        out.append(TightenedClique(c, L, r, m))
    return TightenedSpec(out, M, norm)


# ---------------------------------------------------------------------------
# costs and affine rollouts

@dataclass
class CostWeights:
    """``sum_t |z-r|_Q^2 + |v|_R^2 + |z(N)-r(N)|_Qf^2`` for one agent."""

    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    ref: np.ndarray | None = None       # (n,) or (N+1, n)

    @classmethod
    def default(cls, dyn: AgentDynamics) -> "CostWeights":
        return cls(np.zeros((dyn.n, dyn.n)), np.eye(dyn.m), np.zeros((dyn.n, dyn.n)))

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Qf = np.atleast_2d(np.asarray(self.Qf, dtype=float))
        for name, W in (("Q", self.Q), ("R", self.R), ("Qf", self.Qf)):
            if not np.allclose(W, W.T):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(W).min() < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")
        if self.ref is not None:
            self.ref = np.asarray(self.ref, dtype=float)

    @property
    def max_coeff(self) -> float:
        return float(max(np.abs(self.Q).max(), np.abs(self.R).max(), np.abs(self.Qf).max()))

    def reference(self, N: int, n: int) -> np.ndarray:
        if self.ref is None:
            return np.zeros((N + 1, n))
        return np.broadcast_to(self.ref, (N + 1, n))

    def evaluate(self, z: np.ndarray, v: np.ndarray, t0: int = 0):
        """Cost of stages ``t0..N-1`` plus terminal; gradients w.r.t. z and v."""
        N = v.shape[0]
        r = self.reference(N, z.shape[1])
        dz = z - r
        gz = np.zeros_like(z)
        gv = np.zeros_like(v)
        Qd = dz[t0:N] @ self.Q
        Rv = v[t0:] @ self.R
        val = float(np.sum(Qd * dz[t0:N]) + np.sum(Rv * v[t0:]))
        gz[t0:N] = 2.0 * Qd
        gv[t0:] = 2.0 * Rv
        qf = self.Qf @ dz[N]
        val += float(dz[N] @ qf)
        gz[N] += 2.0 * qf
        return val, gz, gv


class Rollout:
    """``z(t0+k) = A^k s + sum_{j<k} A^(k-1-j) B v(t0+j)`` for ``k = 1..N-t0``."""

    def __init__(self, dyn: AgentDynamics, N: int, t0: int):
        self.dyn, self.N, self.t0 = dyn, N, t0
        K = N - t0
        n, m = dyn.n, dyn.m
        P = [np.eye(n)]
        for _ in range(K):
            P.append(dyn.A @ P[-1])
        self.Phi = np.vstack(P[1:]) if K else np.zeros((0, n))       # (K n, n)
        Psi = np.zeros((K * n, K * m))
        for k in range(1, K + 1):
            for j in range(k):
                Psi[(k - 1) * n:k * n, j * m:(j + 1) * m] = P[k - 1 - j] @ dyn.B
        self.Psi = Psi
        self.K = K

    def states(self, s: np.ndarray, vfree: np.ndarray) -> np.ndarray:
        return (self.Phi @ s + self.Psi @ vfree.reshape(-1)).reshape(self.K, self.dyn.n)

    def pullback(self, gz_future: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. the free inputs from a gradient on ``z(t0+1..N)``."""
        return (self.Psi.T @ gz_future.reshape(-1)).reshape(self.K, self.dyn.m)


@dataclass
class SolverOptions:
    betas: tuple[float, ...] = (1.0, 5.0, 25.0, 125.0)
    beta_scale: float = 1.0
    restarts: int = 5
    seed: int = 0
    max_inner: int = 200
    max_outer: int = 8
    tol: float = 1e-6
    target: float = 1e-3        # aim this far inside each constraint while smoothing
    rho0: float = 10.0
    init_scale: float = 0.5     # std of random restart inputs

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class SynthesisProblem:
    dyns: list[AgentDynamics]
    costs: list[CostWeights]
    spec: TightenedSpec
    N: int
    options: SolverOptions = field(default_factory=SolverOptions)
    omega: list[float] | None = None

    def __post_init__(self):
        if len(self.costs) != len(self.dyns):
            raise ValueError("need one cost per agent")
        if self.spec.M != len(self.dyns):
            raise ValueError("spec and dynamics disagree on the number of agents")
        for tc in self.spec.cliques:
            if tc.formula.horizon > self.N:
                raise ValueError(f"clique {tc.name}: formula horizon {tc.formula.horizon} exceeds N={self.N}")
        if self.omega is None:
            self.omega = [1e3 * max(c.max_coeff, 1e-12) for c in self.costs]

    @property
    def M(self) -> int:
        return len(self.dyns)


@dataclass
class SynthesisResult:
    v: dict[int, np.ndarray]
    z: dict[int, np.ndarray]
    robustness: dict[str, float]
    objective: float
    feasible: bool
    violated: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "v": {str(i): a.tolist() for i, a in self.v.items()},
            "z": {str(i): a.tolist() for i, a in self.z.items()},
            "robustness": self.robustness,
            "objective": self.objective,
            "feasible": self.feasible,
            "violated": self.violated,
            "diagnostics": self.diagnostics,
        }


# ---------------------------------------------------------------------------
# augmented Lagrangian

@dataclass
class _Constraint:
    """``robustness(y) - offset(y) >= lower``; ``offset`` couples the slack."""

    name: str
    clique: int
    lower: float
    slack: bool = False     # subtract the slack variable (last entry of y)


class _Program:
    """Decision vector ``y = [v_a(t0:N) for variable agents] (+ mu)``."""

    def __init__(self, prob: SynthesisProblem, variable: Sequence[int], t0: int,
                 start: Mapping[int, np.ndarray], prefix: Mapping[int, np.ndarray],
                 v_past: Mapping[int, np.ndarray], frozen: Mapping[int, np.ndarray],
                 constraints: list[_Constraint], slack_bounds=None, omega: float = 0.0):
        self.prob, self.t0 = prob, t0
        self.variable = list(variable)
        self.rollouts = {i: Rollout(prob.dyns[i - 1], prob.N, t0) for i in self.variable}
        self.start, self.prefix, self.v_past = start, prefix, v_past
        self.frozen = dict(frozen)
        self.cons = constraints
        self.slack_bounds = slack_bounds
        self.omega = omega
        self.sizes = [(prob.N - t0) * prob.dyns[i - 1].m for i in self.variable]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.n = int(self.offsets[-1]) + (1 if slack_bounds is not None else 0)

    # y <-> plans
    def split(self, y):
        out = {}
        for a, i in enumerate(self.variable):
            m = self.prob.dyns[i - 1].m
            out[i] = y[self.offsets[a]:self.offsets[a + 1]].reshape(-1, m)
        return out

    def pack(self, vfree: Mapping[int, np.ndarray], mu: float | None = None) -> np.ndarray:
        parts = [np.asarray(vfree[i], dtype=float).reshape(-1) for i in self.variable]
        if self.slack_bounds is not None:
            parts.append(np.array([0.0 if mu is None else mu]))
        return np.concatenate(parts) if parts else np.zeros(0)

    def plans(self, y):
        """Full input sequences and traces of the variable agents."""
        vs, zs = {}, {}
        for i, vf in self.split(y).items():
            vs[i] = np.vstack([self.v_past[i][:self.t0], vf])
            fut = self.rollouts[i].states(self.start[i], vf)
            zs[i] = np.vstack([self.prefix[i][:self.t0], self.start[i][None, :], fut])
        return vs, zs

    def traces(self, y):
        vs, zs = self.plans(y)
        allz = dict(self.frozen)
        allz.update(zs)
        return vs, zs, allz

    def bounds(self):
        b = [(None, None)] * (self.n - (1 if self.slack_bounds is not None else 0))
        if self.slack_bounds is not None:
            b.append(self.slack_bounds)
        return b

    # objective
    def objective(self, y, plans=None):
        vs, zs = self.plans(y) if plans is None else plans
        g = np.zeros(self.n)
        val = 0.0
        for a, i in enumerate(self.variable):
            c, gz, gv = self.prob.costs[i - 1].evaluate(zs[i], vs[i], self.t0)
            val += c
            gvf = gv[self.t0:] + self.rollouts[i].pullback(gz[self.t0 + 1:])
            g[self.offsets[a]:self.offsets[a + 1]] = gvf.reshape(-1)
        if self.slack_bounds is not None:
            val -= self.omega * y[-1]
            g[-1] = -self.omega
        return val, g

    # constraints: value >= 0 form
    def constraint(self, y, con: _Constraint, beta, mode, allz=None):
        if allz is None:
            _, _, allz = self.traces(y)
        tc = self.prob.spec.cliques[con.clique]
        tr = aggregate(allz, tc.clique)
        g = np.zeros(self.n)
        if mode == "exact":
            val = eval_robustness(tc.formula, tr)
        else:
            val, G = smooth_robustness(tc.formula, tr, 0, beta, mode)
            col = 0
            for i in tc.clique.members:
                n = self.prob.dyns[i - 1].n
                if i in self.rollouts:
                    a = self.variable.index(i)
                    gvf = self.rollouts[i].pullback(G[self.t0 + 1:, col:col + n])
                    g[self.offsets[a]:self.offsets[a + 1]] = gvf.reshape(-1)
                col += n
        val = val - tc.margin - con.lower
        if con.slack:
            val -= y[-1]
            g[-1] = -1.0
        return val, g


def _al_minimize(prog: _Program, y0: np.ndarray, opts: SolverOptions, betas,
                 lam0: np.ndarray | None = None):
    """One augmented-Lagrangian run through the temperature schedule."""
    ncon = len(prog.cons)
    lam = np.zeros(ncon) if lam0 is None else lam0.copy()
    rho = opts.rho0
    y = y0.copy()
    bounds = prog.bounds()
    iters = 0
    for si, beta in enumerate(betas):
        mode = "lower" if si == len(betas) - 1 else "smooth"
        target = opts.target if mode == "smooth" else 0.0
        prev_viol = math.inf
        for _ in range(opts.max_outer):
            def fun(yy):
                vs, zs = prog.plans(yy)
                f, gf = prog.objective(yy, (vs, zs))
                if ncon:
                    allz = {**prog.frozen, **zs}
                    for k, con in enumerate(prog.cons):
                        c, gc = prog.constraint(yy, con, beta, mode, allz)
                        c -= target
                        s = max(0.0, lam[k] - rho * c)
                        f += (s * s - lam[k] ** 2) / (2.0 * rho)
                        gf = gf - s * gc
                return f, gf

            res = minimize(fun, y, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": opts.max_inner, "gtol": opts.tol * 1e-2,
                                    "ftol": 1e-12})
            y = res.x
            iters += int(res.nit)
            if not ncon:
                break
            _, _, allz = prog.traces(y)
            cv = np.array([prog.constraint(y, con, beta, mode, allz)[0] - target for con in prog.cons])
            lam = np.maximum(0.0, lam - rho * cv)
            viol = float(max(0.0, -cv.min()))
            if viol <= opts.tol:
                break
            if viol > 0.25 * prev_viol:
                rho *= 5.0
            prev_viol = viol
    return y, lam, iters


def _exact_check(prog: _Program, y):
    _, _, allz = prog.traces(y)
    vals = {}
    for con in prog.cons:
        vals[con.name] = prog.constraint(y, con, None, "exact", allz)[0]
    return vals


def _solve_program(prog: _Program, inits: list[np.ndarray], opts: SolverOptions,
                   betas, lam0=None, stop_on_feasible: bool = False):
    """Multi-start solve; returns best exact-feasible point, else least violation."""
    best = None
    tried = 0
    iters = 0
    for y0 in inits:
        y, lam, it = _al_minimize(prog, y0, opts, betas, lam0)
        iters += it
        tried += 1
        viol = _exact_check(prog, y)
        worst = min(viol.values()) if viol else 0.0
        obj = prog.objective(y)[0]
        feas = worst >= 0.0
        key = (0, obj) if feas else (1, -worst)
        if best is None or key < best[0]:
            best = (key, y, viol, feas, lam)
        if feas and stop_on_feasible:
            break
    _, y, viol, feas, lam = best
    mult = {c.name: float(l) for c, l in zip(prog.cons, lam)}
    return y, viol, feas, {"starts": tried, "iterations": iters, "multipliers": mult}


def _betas(opts: SolverOptions):
    return tuple(b * opts.beta_scale for b in opts.betas)


def _certified_gap(prob: SynthesisProblem, cons, beta) -> float:
    from .stl import smoothing_gap
    gaps = [smoothing_gap(prob.spec.cliques[c.clique].formula, beta) for c in cons]
    return max(gaps) if gaps else 0.0


def _check_finite(prob: SynthesisProblem, cliques: Sequence[int]) -> None:
    bad = [prob.spec.cliques[k].name for k in cliques
           if not math.isfinite(prob.spec.cliques[k].margin)]
    if bad:
        raise SynthesisInfeasible(
            f"unbounded prediction region (zero weight) for cliques {bad}",
            {b: -math.inf for b in bad},
        )


def _inits(prog: _Program, incumbent: np.ndarray | None, opts: SolverOptions,
           rng: np.random.Generator, n_random: int) -> list[np.ndarray]:
    out = []
    if incumbent is not None:
        out.append(incumbent)
    out.append(np.zeros(prog.n) if prog.slack_bounds is None
               else np.concatenate([np.zeros(prog.n - 1), [prog.slack_bounds[0]]]))
    for _ in range(n_random):
        y = rng.normal(scale=opts.init_scale, size=prog.n)
        if prog.slack_bounds is not None:
            y[-1] = prog.slack_bounds[0]
        out.append(y)
    return out


# ---------------------------------------------------------------------------
# public solvers

def solve_centralized(prob: SynthesisProblem) -> SynthesisResult:
    """All agents' inputs against every tightened clique constraint at once."""
    _check_finite(prob, range(len(prob.spec.cliques)))
    agents = list(range(1, prob.M + 1))
    start = {i: prob.dyns[i - 1].x0 for i in agents}
    empty = {i: np.zeros((0, prob.dyns[i - 1].n)) for i in agents}
    vpast = {i: np.zeros((0, prob.dyns[i - 1].m)) for i in agents}
    cons = [_Constraint(c.name, k, 0.0) for k, c in enumerate(prob.spec.cliques)]
    prog = _Program(prob, agents, 0, start, empty, vpast, {}, cons)
    rng = np.random.default_rng(prob.options.seed)
    y, viol, feas, diag = _solve_program(prog, _inits(prog, None, prob.options, rng,
                                                      prob.options.restarts - 1),
                                         prob.options, _betas(prob.options))
    return _result(prog, y, viol, feas, diag, prob)


def _result(prog: _Program, y, viol, feas, diag, prob: SynthesisProblem) -> SynthesisResult:
    vs, zs, allz = prog.traces(y)
    rob = {}
    for k, tc in enumerate(prob.spec.cliques):
        try:
            rob[tc.name] = tc.robustness(aggregate(allz, tc.clique))
        except KeyError:
            continue
    betas = _betas(prob.options)
    diag = dict(diag)
    diag.update({
        "betas": list(betas),
        "certified_gap": _certified_gap(prob, prog.cons, betas[-1]),
        "constraint_values": viol,
    })
    obj = float(sum(prob.costs[i - 1].evaluate(zs[i], vs[i])[0] for i in prog.variable))
    violated = [n for n, v in viol.items() if v < 0.0]
    return SynthesisResult(vs, zs, rob, obj, bool(feas), violated, diag)


def solve_agent_initial(prob: SynthesisProblem, i: int) -> SynthesisResult:
    """Agent ``i``'s plan from ``x_i(0)`` under its individual tightened tasks only."""
    ks = prob.spec.individual(i)
    _check_finite(prob, ks)
    dyn = prob.dyns[i - 1]
    cons = [_Constraint(prob.spec.cliques[k].name, k, 0.0) for k in ks]
    prog = _Program(prob, [i], 0, {i: dyn.x0}, {i: np.zeros((0, dyn.n))},
                    {i: np.zeros((0, dyn.m))}, {}, cons)
    rng = np.random.default_rng(prob.options.seed + 7919 * i)
    n_rand = prob.options.restarts - 1 if cons else 0
    y, viol, feas, diag = _solve_program(prog, _inits(prog, None, prob.options, rng, n_rand),
                                         prob.options, _betas(prob.options))
    return _result(prog, y, viol, feas, diag, prob)


@dataclass
class StepContext:
    """Everything agent ``i`` knows when solving at time ``t``.

    ``own_trace`` is the agent's current trajectory (prefix through ``t``
    followed by the incumbent rollout); ``traces`` holds the communicated
    trajectories of clique mates; ``prev`` the tightened robustness of each
    clique in ``T_i`` at ``t-1``.
    """

    i: int
    t: int
    own_trace: np.ndarray        # (N+1, n)
    v_incumbent: np.ndarray      # (N, m)
    traces: dict[int, np.ndarray]
    prev: dict[int, float]       # clique index -> previous tightened robustness
    multipliers: dict[str, float] | None = None   # warm start from the last solve


def step_constraints(prob: SynthesisProblem, ctx: StepContext):
    """Constraints of the step problem and the slack clique (or None)."""
    spec = prob.spec
    cons = [_Constraint(spec.cliques[k].name, k, 0.0) for k in spec.individual(ctx.i)]
    collab = spec.collaborative(ctx.i)
    nu_t = None
    if collab:
        nu_t = min(collab, key=lambda k: (ctx.prev[k], k))
        cons.append(_Constraint(spec.cliques[nu_t].name, nu_t, 0.0, slack=True))
        for k in collab:
            if k != nu_t:
                cons.append(_Constraint(spec.cliques[k].name, k, min(0.0, ctx.prev[k])))
    return cons, nu_t


def solve_agent_step(prob: SynthesisProblem, ctx: StepContext, omega: float | None = None,
                     fast: bool = True) -> SynthesisResult:
    """Re-plan agent ``i``'s inputs ``v_i(t..N-1)``; other members stay frozen.

    The least-robust collaborative clique gets a slack ``mu`` in
    ``[min(0, prev), 0]`` rewarded by ``omega``; other collaborative cliques
    may not drop below ``min(0, prev)``; individual tasks stay tightened.
    """
    i, t = ctx.i, ctx.t
    N = prob.N
    if not 1 <= t <= N:
        raise ValueError(f"step time must lie in 1..{N}, got {t}")
    omega = prob.omega[i - 1] if omega is None else float(omega)
    if not omega > 0.0:
        raise ValueError("omega must be positive")
    dyn = prob.dyns[i - 1]
    cons, nu_t = step_constraints(prob, ctx)
    _check_finite(prob, [c.clique for c in cons])
    slack_bounds = None
    if nu_t is not None:
        slack_bounds = (min(0.0, ctx.prev[nu_t]), 0.0)
    frozen = {j: tr for j, tr in ctx.traces.items() if j != i}
    prefix = {i: ctx.own_trace}
    prog = _Program(prob, [i], t, {i: ctx.own_trace[t]}, prefix, {i: ctx.v_incumbent},
                    frozen, [], slack_bounds, omega)

    # constraints fully decided by the frozen prefix are constants
    live = []
    fixed = {}
    for con in cons:
        tc = prob.spec.cliques[con.clique]
        _, hi = read_window(tc.formula.root)
        if hi <= t and not con.slack:
            fixed[con.name] = prog.constraint(np.zeros(prog.n), con, None, "exact")[0]
        else:
            live.append(con)
    prog.cons = live
    if any(v < 0.0 for v in fixed.values()):
        y = prog.pack({i: ctx.v_incumbent[t:]}, slack_bounds[0] if slack_bounds else None)
        res = _result(prog, y, fixed, False, {"starts": 0, "iterations": 0,
                                              "decided_by_prefix": True}, prob)
        res.violated = [n for n, v in fixed.items() if v < 0.0]
        return res

    inc_mu = None
    if slack_bounds is not None:
        # best slack the incumbent supports
        yinc = prog.pack({i: ctx.v_incumbent[t:]}, 0.0)
        con = next(c for c in live if c.slack)
        r = prog.constraint(yinc, con, None, "exact")[0]       # rob - mu with mu = 0
        inc_mu = float(np.clip(r, *slack_bounds))
    y_inc = prog.pack({i: ctx.v_incumbent[t:]}, inc_mu)
    # warm multipliers: the previous solve's, and omega for the slack row
    # (its stationarity condition when mu is strictly inside its bounds)
    known = ctx.multipliers or {}
    lam0 = np.array([omega if c.slack else known.get(c.name, 0.0) for c in live])
    opts = prob.options
    betas = _betas(opts)
    rng = np.random.default_rng(opts.seed + 104729 * t + 7919 * i)
    if fast:
        inits = [y_inc]
        y, viol, feas, diag = _solve_program(prog, inits, opts, betas[-1:], lam0)
        if not feas:
            more = _inits(prog, None, opts, rng, 1)
            y2, viol2, feas2, diag2 = _solve_program(prog, more, opts, betas, lam0)
            diag = {"starts": diag["starts"] + diag2["starts"],
                    "iterations": diag["iterations"] + diag2["iterations"],
                    "multipliers": diag2["multipliers"]}
            if feas2 or min(viol2.values(), default=0) > min(viol.values(), default=0):
                y, viol, feas = y2, viol2, feas2
    else:
        y, viol, feas, diag = _solve_program(prog, _inits(prog, y_inc, opts, rng, opts.restarts - 2),
                                             opts, betas, lam0)
    # keep the incumbent if it is feasible and no worse
    inc_viol = _exact_check(prog, y_inc)
    if all(v >= 0.0 for v in inc_viol.values()):
        obj_new = prog.objective(y)[0]
        obj_inc = prog.objective(y_inc)[0]
        if not feas or obj_inc <= obj_new:
            y, viol, feas = y_inc, inc_viol, True
            diag = dict(diag, kept_incumbent=True)
    viol = {**fixed, **viol}
    res = _result(prog, y, viol, feas, diag, prob)
    res.diagnostics["nu_t"] = None if nu_t is None else prob.spec.cliques[nu_t].name
    res.diagnostics["mu"] = None if slack_bounds is None else float(y[-1])
    res.diagnostics["slack_bounds"] = slack_bounds
    res.diagnostics["objective_with_slack"] = res.objective - (
        0.0 if slack_bounds is None else omega * float(y[-1]))
    return res
