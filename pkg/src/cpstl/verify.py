"""Monte Carlo checks of the chance constraint and of conformal coverage."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .mas import AgentDynamics, FeedbackGains, build_stacked, error_operator
from .runtime import RuntimeOptions, run_closed_loop
from .synthesis import SynthesisProblem, SynthesisResult
from .uq import conformal_index, conformal_quantile, pac_adjusted_level


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(n)).proportion_ci(confidence_level=confidence,
                                                               method="wilson")
    return float(ci.low), float(ci.high)


def gaussian_sampler(sigma2: float, dims: Sequence[int], N: int):
    """Per-run disturbance draws ``w_i(t) ~ N(0, sigma2 I)``."""
    sd = math.sqrt(sigma2)

    def draw(rng: np.random.Generator) -> list[np.ndarray]:
        return [sd * rng.standard_normal((N, n)) for n in dims]
    return draw


@dataclass
class SatisfactionReport:
    n_runs: int
    successes: int
    rate: float
    wilson: tuple[float, float]
    robustness: np.ndarray
    flagged_runs: int
    infeasible_solves: int
    disjointness_violations: int
    degradation_violations: int
    selection_counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "successes": self.successes,
            "rate": self.rate,
            "wilson95": list(self.wilson),
            "robustness_mean": float(np.mean(self.robustness)) if self.n_runs else None,
            "robustness_min": float(np.min(self.robustness)) if self.n_runs else None,
            "flagged_runs": self.flagged_runs,
            "infeasible_solves": self.infeasible_solves,
            "disjointness_violations": self.disjointness_violations,
            "degradation_violations": self.degradation_violations,
            "selection_counts": {str(k): v for k, v in self.selection_counts.items()},
        }


def monte_carlo_satisfaction(prob: SynthesisProblem, gains: FeedbackGains,
                             plans: Mapping[int, SynthesisResult], n_runs: int, seed: int,
                             sampler: Callable[[np.random.Generator], list[np.ndarray]],
                             options: RuntimeOptions | None = None,
                             on_run: Callable[[int, object], None] | None = None) -> SatisfactionReport:
    """Closed-loop runs on fresh disturbances; rate of ``x |= phi``.

    Run ``r`` draws from its own generator seeded by ``(seed, r)``, so the
    result does not depend on execution order.
    """
    rob = np.empty(n_runs)
    succ = flagged = infeas = disj = degr = 0
    counts = {i: 0 for i in range(1, prob.M + 1)}
    for r in range(n_runs):
        rng = np.random.default_rng([seed, r])
        tr = run_closed_loop(prob, gains, sampler(rng), plans, options)
        rob[r] = tr.robustness
        succ += tr.satisfied
        flagged += tr.flagged
        infeas += tr.infeasible_solves
        disj += tr.disjointness_violations
        degr += tr.degradation_violations
        for s in tr.selected:
            for i in s:
                counts[i] += 1
        if on_run is not None:
            on_run(r, tr)
    return SatisfactionReport(n_runs, succ, succ / n_runs if n_runs else float("nan"),
                              wilson_interval(succ, n_runs), rob, flagged, infeas, disj, degr,
                              counts)


# ---------------------------------------------------------------------------
# coverage

@dataclass
class CoverageReport:
    theta: float
    theta_used: float
    k1: int
    n_trials: int
    marginal: float
    wilson: tuple[float, float]
    exact_marginal: float
    conditional: np.ndarray          # per-trial coverage F(q)
    beta_params: tuple[int, int]     # law of F(q) for continuous scores
    pac_beta: float | None = None
    pac_fraction: float | None = None

    @property
    def beta_mean(self) -> float:
        a, b = self.beta_params
        return a / (a + b)

    @property
    def beta_var(self) -> float:
        a, b = self.beta_params
        return a * b / ((a + b) ** 2 * (a + b + 1))

    def histogram(self, bins: int = 20):
        return np.histogram(self.conditional, bins=bins, range=(0.0, 1.0))

    def to_dict(self) -> dict:
        h, edges = self.histogram()
        return {
            "theta": self.theta,
            "theta_used": self.theta_used,
            "k1": self.k1,
            "n_trials": self.n_trials,
            "marginal": self.marginal,
            "wilson95": list(self.wilson),
            "exact_marginal": self.exact_marginal,
            "conditional_mean": float(self.conditional.mean()),
            "conditional_var": float(self.conditional.var()),
            "beta_params": list(self.beta_params),
            "beta_mean": self.beta_mean,
            "beta_var": self.beta_var,
            "histogram": {"counts": h.tolist(), "edges": edges.tolist()},
            "pac_beta": self.pac_beta,
            "pac_fraction": self.pac_fraction,
        }


def coverage_experiment(sample: Callable[[np.random.Generator, int], np.ndarray],
                        cdf: Callable[[float], float], theta: float, k1: int, n_trials: int,
                        seed: int = 0, pac_beta: float | None = None) -> CoverageReport:
    """Repeat split calibration with fresh calibration sets and test points.

    ``sample(rng, size)`` draws scores; ``cdf`` is their distribution
    function, giving each trial's exact conditional coverage ``F(q)``.
    """
    if n_trials < 2:
        warnings.warn("fewer than two trials: marginal coverage estimate is unreliable",
                      RuntimeWarning, stacklevel=2)
    theta_used = theta if pac_beta is None else pac_adjusted_level(theta, pac_beta, k1)
    p = conformal_index(k1, theta_used)
    rng = np.random.default_rng(seed)
    hits = 0
    cond = np.empty(n_trials)
    for r in range(n_trials):
        cal = sample(rng, k1)
        q = conformal_quantile(cal, theta_used)
        test = sample(rng, 1)[0]
        hits += test <= q
        cond[r] = 1.0 if math.isinf(q) else float(cdf(q))
    frac = None
    if pac_beta is not None:
        frac = float(np.mean(cond >= 1.0 - theta))
    return CoverageReport(
        theta, theta_used, k1, n_trials, hits / n_trials, wilson_interval(hits, n_trials),
        min(p, k1 + 1) / (k1 + 1), cond, (min(p, k1), k1 + 1 - min(p, k1)), pac_beta, frac,
    )


# ---------------------------------------------------------------------------
# union-bound baseline

class UnreachableTarget(ValueError):
    pass


def error_std(dyn: AgentDynamics, gains: np.ndarray, N: int, sigma2: float) -> np.ndarray:
    """Standard deviation of every error coordinate, shape ``(N, n)``."""
    ops = build_stacked(dyn, N)
    K = error_operator(ops, gains)
    return np.sqrt(sigma2 * np.sum(K * K, axis=1)).reshape(N, dyn.n)


def union_bound_radius(stds: Sequence[np.ndarray], prob: float, norm: str = "2",
                       max_radius: float | None = None) -> float:
    """Smallest ``r`` whose Gaussian union bound gives ``P(all errors in ball) >= prob``.

    Each agent/time/coordinate contributes ``P(|e_d| > r / c)`` with
    ``c = sqrt(n)`` for the 2-norm ball (coordinate split) and ``c = 1`` for
    the inf-norm box.
    """
    if not 0.0 < prob < 1.0:
        raise UnreachableTarget(f"target probability must lie in (0, 1), got {prob}")
    scales = []
    for s in stds:
        n = s.shape[-1]
        c = math.sqrt(n) if norm == "2" else 1.0
        scales.append(c * s.reshape(-1))
    sc = np.concatenate(scales)
    sc = sc[sc > 0]
    if sc.size == 0:
        return 0.0
    budget = 1.0 - prob

    def excess(r):
        return float(np.sum(2.0 * stats.norm.sf(r / sc))) - budget

    hi = float(sc.max())
    while excess(hi) > 0:
        hi *= 2.0
    r = optimize.brentq(excess, 0.0, hi, xtol=1e-12, rtol=1e-12)
    if max_radius is not None and r > max_radius:
        raise UnreachableTarget(
            f"radius {r:.4g} needed for probability {prob} exceeds the admissible {max_radius:.4g}"
        )
    return float(r)


def union_bound_baseline(sigma2: float, gains: FeedbackGains, dyns: Sequence[AgentDynamics],
                         N: int, prob: float, norm: str = "2",
                         per_agent: bool = True, max_radius: float | None = None) -> list[float]:
    """Radius bounding ``max_t ||e_i(t)||`` for all agents jointly w.p. ``>= prob``.

    With ``per_agent`` the failure budget is split evenly across agents and a
    radius is returned per agent; otherwise one common radius is returned for
    every agent.
    """
    stds = [error_std(d, G, N, sigma2) for d, G in zip(dyns, gains.mats)]
    if not per_agent:
        r = union_bound_radius(stds, prob, norm, max_radius)
        return [r] * len(dyns)
    M = len(dyns)
    p_agent = 1.0 - (1.0 - prob) / M
    return [union_bound_radius([s], p_agent, norm, max_radius) for s in stds]
