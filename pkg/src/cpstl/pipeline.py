"""End-to-end steps shared by the command line and the acceptance tests."""

from __future__ import annotations

import math

import numpy as np

from .config import Scenario
from .datasets import DisturbanceDataset, build_error_set, generate_gaussian
from .mas import FeedbackGains, build_stacked
from .runtime import ClosedLoopTrace, RuntimeOptions, initial_plans, run_closed_loop
from .synthesis import SynthesisProblem, SynthesisResult, tighten
from .uq import PredictionRegions, TrainingData, TrainingResult, calibrate_regions, coordinate_descent
from .verify import gaussian_sampler


def generate_dataset(sc: Scenario, seed: int | None = None) -> DisturbanceDataset:
    d = sc.disturbance
    if d.get("kind", "gaussian") != "gaussian":
        raise ValueError(f"unknown disturbance kind {d.get('kind')!r}")
    seed = int(d.get("seed", 0)) if seed is None else int(seed)
    return generate_gaussian(sc.M, sc.N, sc.dims, float(d["sigma2"]), sc.split.total, seed,
                             d.get("ar"))


def check_dataset(sc: Scenario, ds: DisturbanceDataset) -> None:
    if ds.M != sc.M or ds.N != sc.N or ds.dims != sc.dims:
        raise ValueError(
            f"dataset shape (M={ds.M}, N={ds.N}, dims={ds.dims}) does not match the scenario "
            f"(M={sc.M}, N={sc.N}, dims={sc.dims})"
        )
    if ds.n_samples < sc.split.total:
        raise ValueError(f"dataset has {ds.n_samples} samples, the split needs {sc.split.total}")


def train(sc: Scenario, ds: DisturbanceDataset) -> TrainingResult:
    check_dataset(sc, ds)
    data = TrainingData.from_dataset(ds, sc.split.train, sc.dyns, sc.cliques, sc.theta,
                                     sc.uq["norm"], sc.gain_structure)
    return coordinate_descent(data, int(sc.uq["tau_max"]))


def calibrate(sc: Scenario, ds: DisturbanceDataset, training: TrainingResult,
              pac_beta: float | None = None) -> PredictionRegions:
    check_dataset(sc, ds)
    ops = [build_stacked(d, sc.N) for d in sc.dyns]
    errs = build_error_set(ds, sc.split.calibration, ops, training.gains, sc.cliques,
                           sc.uq["norm"])
    beta = sc.uq.get("pac_beta") if pac_beta is None else pac_beta
    return calibrate_regions(errs, training.C, sc.theta, beta)


def build_problem(sc: Scenario, radii: PredictionRegions | np.ndarray) -> SynthesisProblem:
    spec = tighten(sc.cliques, radii, sc.M, sc.uq["norm"])
    return SynthesisProblem(sc.dyns, sc.costs, spec, sc.N, sc.solver_options, sc.omega)


def sampler(sc: Scenario, scale: float = 1.0):
    return gaussian_sampler(float(sc.disturbance["sigma2"]) * scale * scale, sc.dims, sc.N)


def realization(sc: Scenario, seed: int, run: int = 0, scale: float = 1.0) -> list[np.ndarray]:
    """Disturbances of Monte Carlo run ``run`` under ``seed``."""
    return sampler(sc, scale)(np.random.default_rng([int(seed), int(run)]))


def simulate(sc: Scenario, prob: SynthesisProblem, gains: FeedbackGains,
             w: list[np.ndarray], plans: dict[int, SynthesisResult] | None = None,
             options: RuntimeOptions | None = None) -> ClosedLoopTrace:
    if plans is None:
        plans = initial_plans(prob)
    return run_closed_loop(prob, gains, w, plans, options or sc.runtime_options)


def radius_table(regions: PredictionRegions, baseline: list[float], sc: Scenario) -> list[dict]:
    """CP radius of each individual clique next to that agent's baseline radius."""
    rows = []
    for name, r in zip(regions.clique_names, regions.radii):
        c = next(c for c in sc.cliques if c.name == name)
        if not c.is_individual:
            continue
        i = c.members[0]
        rows.append({
            "agent": i,
            "cp_radius": float(r) if math.isfinite(r) else None,
            "baseline_radius": baseline[i - 1],
            "cp_smaller": bool(r < baseline[i - 1]),
        })
    return rows
