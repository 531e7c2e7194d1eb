"""Distributed closed-loop execution with robustness-based agent selection.

Each round: agents compute their robustness summary from the previous plans,
measure, rebuild their trajectory, exchange messages with clique mates,
decide who re-plans, re-plan, and apply disturbance feedback plus the
nominal input.  Rounds are synchronous and all cross-agent data moves
through :class:`CliqueMessage` values in per-agent mailboxes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .mas import FeedbackGains, aggregate, nominal_trajectory
from .stl import eval_robustness
from .synthesis import (
    StepContext, SynthesisProblem, SynthesisResult, solve_agent_initial, solve_agent_step,
)


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class CliqueMessage:
    sender: int
    t: int
    r: float
    trajectory: np.ndarray       # (N+1, n) with the sender's prefix through t


@dataclass
class RuntimeOptions:
    """``replan_from="measured"`` restarts plans from the measured state;
    ``"nominal"`` restarts from ``x(t) - e(t)``, which keeps ``x = z + e``
    exact for the feedback-gain error."""

    replan_from: str = "measured"
    fast: bool = True
    check_invariants: bool = True

    def __post_init__(self):
        if self.replan_from not in ("measured", "nominal"):
            raise ValueError(f"replan_from must be 'measured' or 'nominal', got {self.replan_from!r}")


@dataclass
class AgentState:
    i: int
    x: list[np.ndarray]
    w: list[np.ndarray]
    u: list[np.ndarray]
    e: np.ndarray                 # current error x - z under the feedback policy
    v: np.ndarray                 # (N, m) current input plan
    trace: np.ndarray             # (N+1, n) current trajectory
    r: float = math.inf
    multipliers: dict = field(default_factory=dict)


@dataclass
class ClosedLoopTrace:
    x: dict[int, np.ndarray]
    u: dict[int, np.ndarray]
    w: dict[int, np.ndarray]
    z: dict[int, np.ndarray]
    v: dict[int, np.ndarray]
    steps: list[dict]
    selected: list[list[int]]
    robustness: float
    clique_robustness: dict[str, float]
    satisfied: bool
    flagged: bool
    disjointness_violations: int = 0
    degradation_violations: int = 0
    infeasible_solves: int = 0

    def summary(self) -> dict:
        return {
            "type": "summary",
            "robustness": self.robustness,
            "clique_robustness": self.clique_robustness,
            "satisfied": self.satisfied,
            "flagged": self.flagged,
            "disjointness_violations": self.disjointness_violations,
            "degradation_violations": self.degradation_violations,
            "infeasible_solves": self.infeasible_solves,
            "selection_counts": {str(i): sum(i in s for s in self.selected) for i in self.x},
        }


def _mailboxes(prob: SynthesisProblem):
    nbrs = {}
    for i in range(1, prob.M + 1):
        s = set()
        for k in prob.spec.T[i]:
            s.update(prob.spec.cliques[k].clique.members)
        s.discard(i)
        nbrs[i] = sorted(s)
    return nbrs


def select_solvers(r: Mapping[int, float], cliques_of: Mapping[int, Sequence[Sequence[int]]]) -> list[int]:
    """Agents strictly least robust in every clique they belong to.

    Ties are broken by the lower agent index, i.e. ``(r_i, i) < (r_j, j)``.
    ``cliques_of[i]`` lists the member tuples of the cliques containing ``i``.
    """
    out = []
    for i, cls in cliques_of.items():
        if i not in r:
            raise ProtocolError(f"missing message from agent {i}")
        ok = True
        for members in cls:
            for j in members:
                if j == i:
                    continue
                if j not in r:
                    raise ProtocolError(f"missing message from agent {j} for agent {i}")
                if not (r[i], i) < (r[j], j):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            out.append(i)
    return sorted(out)


def initial_plans(prob: SynthesisProblem) -> dict[int, SynthesisResult]:
    """Each agent's individual-task plan from its initial state (broadcast before the loop)."""
    return {i: solve_agent_initial(prob, i) for i in range(1, prob.M + 1)}


def _rollout_from(dyn, s, v, t, prefix):
    z = nominal_trajectory(dyn, v[t:], z0=s)
    return np.vstack([prefix[:t], z])


def run_closed_loop(prob: SynthesisProblem, gains: FeedbackGains, w: Sequence[np.ndarray],
                    plans: Mapping[int, SynthesisResult] | None = None,
                    options: RuntimeOptions | None = None) -> ClosedLoopTrace:
    """Execute the distributed loop for one disturbance realization.

    ``w[i-1]`` is agent ``i``'s disturbance sequence ``(N, n)``.
    """
    opts = options or RuntimeOptions()
    N, M = prob.N, prob.M
    spec = prob.spec
    if plans is None:
        plans = initial_plans(prob)
    flagged = any(not p.feasible for p in plans.values())
    cliques_of = {i: [spec.cliques[k].clique.members for k in spec.T[i]] for i in range(1, M + 1)}
    nbrs = _mailboxes(prob)

    agents: dict[int, AgentState] = {}
    for i in range(1, M + 1):
        dyn = prob.dyns[i - 1]
        v0 = np.array(plans[i].v[i], dtype=float)
        agents[i] = AgentState(i, [dyn.x0.copy()], [], [], np.zeros(dyn.n), v0,
                               nominal_trajectory(dyn, v0))
        agents[i].multipliers = dict(plans[i].diagnostics.get("multipliers", {}))

    def clique_rob(traces):
        return [tc.robustness(aggregate(traces, tc.clique)) for tc in spec.cliques]

    rob_prev = clique_rob({i: a.trace for i, a in agents.items()})
    steps, selected_all = [], []
    n_disjoint = n_degrade = n_infeasible = 0

    # u(0) has no feedback term
    for i, a in agents.items():
        dyn = prob.dyns[i - 1]
        a.u.append(a.v[0].copy())

    for t in range(1, N + 1):
        # robustness summary from the previous plans
        for i, a in agents.items():
            a.r = min((rob_prev[k] for k in spec.T[i]), default=math.inf)
        # measure
        for i, a in agents.items():
            dyn = prob.dyns[i - 1]
            wt = np.asarray(w[i - 1][t - 1], dtype=float)
            x_new = dyn.A @ a.x[-1] + dyn.B @ a.u[-1] + wt
            a.x.append(x_new)
            a.w.append(x_new - dyn.A @ a.x[-2] - dyn.B @ a.u[-1])
            fb = a.u[-1] - a.v[t - 1]
            a.e = dyn.A @ a.e + dyn.B @ fb + a.w[-1]
            if opts.replan_from == "measured":
                prefix = np.vstack(a.x)
                a.trace = _rollout_from(dyn, a.x[-1], a.v, t, prefix)
            else:
                a.trace = _rollout_from(dyn, a.x[-1] - a.e, a.v, t, a.trace)
        # exchange
        inbox: dict[int, dict[int, CliqueMessage]] = {i: {} for i in agents}
        for i, a in agents.items():
            msg = CliqueMessage(i, t, a.r, a.trace.copy())
            for j in nbrs[i]:
                inbox[j][i] = msg
        r_all = {}
        for i, a in agents.items():
            r_all[i] = a.r
            for j in nbrs[i]:
                if j not in inbox[i]:
                    raise ProtocolError(f"agent {i} missing message from {j} at t={t}")
        sel = select_solvers(r_all, cliques_of)
        if opts.check_invariants:
            for p, i in enumerate(sel):
                for j in sel[p + 1:]:
                    if set(spec.T[i]) & set(spec.T[j]):
                        n_disjoint += 1
        selected_all.append(sel)

        # solve (selected agents only see their mailbox)
        solves = {}
        if t < N:
            results = {}
            for i in sel:
                a = agents[i]
                traces = {j: m.trajectory for j, m in inbox[i].items()}
                traces[i] = a.trace
                ctx = StepContext(i, t, a.trace, a.v, traces, {k: rob_prev[k] for k in spec.T[i]},
                                  a.multipliers)
                results[i] = solve_agent_step(prob, ctx, fast=opts.fast)
            for i, res in results.items():
                a = agents[i]
                info = {"feasible": res.feasible, "nu_t": res.diagnostics.get("nu_t"),
                        "mu": res.diagnostics.get("mu"),
                        "kept_incumbent": bool(res.diagnostics.get("kept_incumbent", False))}
                if res.feasible:
                    a.v = res.v[i]
                    a.trace = res.z[i]
                    a.multipliers.update(res.diagnostics.get("multipliers", {}))
                else:
                    n_infeasible += 1
                    flagged = True
                    info["violated"] = res.violated
                solves[i] = info

        traces_now = {i: a.trace for i, a in agents.items()}
        rob_now = clique_rob(traces_now)
        if opts.check_invariants:
            for i, info in solves.items():
                if not info["feasible"]:
                    continue
                for k in spec.T[i]:
                    if rob_now[k] < min(0.0, rob_prev[k]) - 1e-9:
                        n_degrade += 1

        # apply
        if t < N:
            for i, a in agents.items():
                fbk = gains.feedback(i, t, np.asarray(a.w))
                a.u.append(fbk + a.v[t])

        steps.append({
            "type": "step",
            "t": t,
            "x": {str(i): a.x[-1].tolist() for i, a in agents.items()},
            "u": {str(i): a.u[-1].tolist() for i, a in agents.items()} if t < N else None,
            "r": {str(i): a.r for i, a in agents.items()},
            "selected": sel,
            "solves": {str(i): s for i, s in solves.items()},
            "robustness": {tc.name: rob_now[k] for k, tc in enumerate(spec.cliques)},
        })
        rob_prev = rob_now

    xs = {i: np.vstack(a.x) for i, a in agents.items()}
    crob = {}
    for tc in spec.cliques:
        crob[tc.name] = eval_robustness(tc.formula, aggregate(xs, tc.clique))
    total = min(crob.values()) if crob else math.inf
    return ClosedLoopTrace(
        x=xs,
        u={i: np.vstack(a.u) for i, a in agents.items()},
        w={i: np.vstack(a.w) for i, a in agents.items()},
        z={i: a.trace for i, a in agents.items()},
        v={i: a.v for i, a in agents.items()},
        steps=steps,
        selected=selected_all,
        robustness=float(total),
        clique_robustness=crob,
        satisfied=bool(total >= 0.0),
        flagged=flagged,
        disjointness_violations=n_disjoint,
        degradation_violations=n_degrade,
        infeasible_solves=n_infeasible,
    )


def jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return jsonable(x.item())
    return x


def trace_lines(tr: ClosedLoopTrace) -> list[str]:
    lines = [json.dumps(jsonable(s), sort_keys=True) for s in tr.steps]
    lines.append(json.dumps(jsonable(tr.summary()), sort_keys=True))
    return lines


def write_trace(tr: ClosedLoopTrace, path: str | Path) -> None:
    Path(path).write_text("\n".join(trace_lines(tr)) + "\n", encoding="utf-8")
