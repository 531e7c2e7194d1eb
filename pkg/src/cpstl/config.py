"""YAML scenario files: agents, regions, clique formulas and pipeline settings."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .datasets import DatasetSplit
from .mas import AgentDynamics, CliqueSpec, agent_signal
from .runtime import RuntimeOptions
from .stl import parse_formula
from .synthesis import CostWeights, SolverOptions
from .uq import GainStructure


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "disturbance": {"kind": "gaussian", "sigma2": 0.05, "ar": None, "seed": 0},
    "dataset": {"n_calibration": 100, "n_train": 100, "path": None},
    "uq": {
        "theta": 0.05,
        "pac_beta": None,
        "norm": "inf",
        "tau_max": 4,
        "gain_structure": {"kind": "full", "bandwidth": None},
    },
    "synthesis": {"omega": None},
    "runtime": {"replan_from": "measured", "fast": True},
    "verify": {"n_runs": 500, "seed": 1, "coverage_trials": 2000, "baseline_prob": 0.7},
    "regions": {},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _req(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"missing config key '{where}{key}'")
    return d[key]


def _matrix(x, where: str) -> np.ndarray:
    try:
        return np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"'{where}' is not numeric") from None


@dataclass
class Scenario:
    name: str
    N: int
    dyns: list[AgentDynamics]
    costs: list[CostWeights]
    cliques: list[CliqueSpec]
    raw: dict = field(repr=False)

    @property
    def M(self) -> int:
        return len(self.dyns)

    @property
    def dims(self) -> list[int]:
        return [d.n for d in self.dyns]

    @property
    def disturbance(self) -> dict:
        return self.raw["disturbance"]

    @property
    def split(self) -> DatasetSplit:
        d = self.raw["dataset"]
        return DatasetSplit.from_counts(int(d["n_calibration"]), int(d["n_train"]))

    @property
    def uq(self) -> dict:
        return self.raw["uq"]

    @property
    def theta(self) -> float:
        return float(self.uq["theta"])

    @property
    def gain_structure(self) -> GainStructure:
        g = self.uq["gain_structure"]
        bw = g.get("bandwidth")
        return GainStructure(g.get("kind", "full"), None if bw is None else int(bw))

    @property
    def solver_options(self) -> SolverOptions:
        s = {k: v for k, v in self.raw["synthesis"].items() if k != "omega"}
        if "betas" in s:
            s["betas"] = tuple(float(b) for b in s["betas"])
        try:
            return SolverOptions(**s)
        except TypeError as exc:
            raise ConfigError(f"bad synthesis option: {exc}") from None

    @property
    def omega(self) -> list[float] | None:
        om = self.raw["synthesis"].get("omega")
        if om is None:
            return None
        return [float(om)] * self.M if np.isscalar(om) else [float(o) for o in om]

    @property
    def runtime_options(self) -> RuntimeOptions:
        try:
            return RuntimeOptions(**self.raw["runtime"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad runtime option: {exc}") from None

    @property
    def verify(self) -> dict:
        return self.raw["verify"]


def scenario_from_dict(cfg: dict) -> Scenario:
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a mapping")
    cfg = _merge(DEFAULTS, cfg)
    N = int(_req(cfg, "horizon", ""))
    if N < 1:
        raise ConfigError("'horizon' must be positive")
    agents = _req(cfg, "agents", "")
    if not isinstance(agents, list) or not agents:
        raise ConfigError("'agents' must be a non-empty list")
    dyns, costs = [], []
    for i, a in enumerate(agents, start=1):
        where = f"agents[{i}]."
        try:
            dyn = AgentDynamics(_matrix(_req(a, "A", where), where + "A"),
                                _matrix(_req(a, "B", where), where + "B"),
                                _matrix(_req(a, "x0", where), where + "x0"))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"agent {i}: {exc}") from None
        dyns.append(dyn)
        c = a.get("cost") or {}
        try:
            costs.append(CostWeights(
                c.get("Q", np.zeros((dyn.n, dyn.n))),
                c.get("R", np.eye(dyn.m)),
                c.get("Qf", np.zeros((dyn.n, dyn.n))),
                c.get("ref"),
            ))
        except ValueError as exc:
            raise ConfigError(f"agent {i} cost: {exc}") from None

    regions = {}
    for name, r in (cfg.get("regions") or {}).items():
        where = f"regions.{name}."
        regions[name] = (_matrix(_req(r, "lo", where), where + "lo"),
                         _matrix(_req(r, "hi", where), where + "hi"))

    cl_raw = _req(cfg, "cliques", "")
    if not isinstance(cl_raw, list) or not cl_raw:
        raise ConfigError("'cliques' must be a non-empty list")
    cliques = []
    for k, c in enumerate(cl_raw, start=1):
        where = f"cliques[{k}]."
        members = tuple(sorted(int(m) for m in _req(c, "members", where)))
        for m in members:
            if not 1 <= m <= len(dyns):
                raise ConfigError(f"clique {k}: member {m} is not an agent")
        text = str(_req(c, "formula", where))
        layout = {agent_signal(m): dyns[m - 1].n for m in members}
        try:
            phi = parse_formula(text, layout, regions)
            cliques.append(CliqueSpec(members, phi, c.get("name", "")))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"clique {k} ({text!r}): {exc}") from None
    names = [c.name for c in cliques]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate clique names: {names}")
    sc = Scenario(str(cfg.get("name", "scenario")), N, dyns, costs, cliques, cfg)
    # validate derived settings early
    if not 0.0 < sc.theta < 1.0:
        raise ConfigError("'uq.theta' must lie in (0, 1)")
    if cfg["uq"]["norm"] not in ("inf", "2"):
        raise ConfigError("'uq.norm' must be 'inf' or '2'")
    try:
        sc.split
        sc.gain_structure
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    sc.solver_options
    sc.runtime_options
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return scenario_from_dict(cfg)
