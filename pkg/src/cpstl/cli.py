"""Command line: gen-data, train, calibrate, run, verify.

Exit codes: 0 success, 2 infeasible, 3 bad input, 4 solver or internal failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np
from scipy import stats

from . import pipeline
from .config import ConfigError, Scenario, load_scenario
from .datasets import DatasetError, export_csv, ingest
from .mas import agent_signal
from .runtime import jsonable, initial_plans, write_trace
from .synthesis import SynthesisError, SynthesisInfeasible
from .uq import CalibrationError, LPError, PredictionRegions, TrainingResult
from .verify import (
    UnreachableTarget, coverage_experiment, monte_carlo_satisfaction, union_bound_baseline,
)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4


def _dump(obj, path: str | Path) -> None:
    text = json.dumps(jsonable(obj), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None


def _load_dataset(sc: Scenario, path: str):
    ds = ingest(path, sc.M, None, sc.dims)
    pipeline.check_dataset(sc, ds)
    return ds


def _load_artifacts(sc: Scenario, gains_path: str, regions_path: str):
    try:
        training = TrainingResult.from_dict(_load_json(gains_path))
        regions = PredictionRegions.from_dict(_load_json(regions_path))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed artifact: missing {exc}") from None
    if training.gains.N != sc.N or len(training.gains.mats) != sc.M:
        raise ConfigError("gains artifact does not match the scenario horizon or agent count")
    if regions.clique_names != [c.name for c in sc.cliques]:
        raise ConfigError(
            f"regions artifact cliques {regions.clique_names} differ from the scenario's "
            f"{[c.name for c in sc.cliques]}"
        )
    return training, regions


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    sc = load_scenario(args.config)
    ds = pipeline.generate_dataset(sc, args.seed)
    export_csv(ds, args.out)
    print(f"wrote {ds.n_samples} sequences per agent ({ds.provenance}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    sc = load_scenario(args.config)
    ds = _load_dataset(sc, args.dataset)
    res = pipeline.train(sc, ds)
    out = res.to_dict()
    out["gain_structure"] = sc.gain_structure.to_dict()
    out["tau_max"] = int(sc.uq["tau_max"])
    out["config"] = sc.raw
    _dump(out, args.out)
    print(f"C* = {np.round(res.C, 6).tolist()}, final objective {res.trace[-1]['objective']:.6g}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    sc = load_scenario(args.config)
    ds = _load_dataset(sc, args.dataset)
    try:
        training = TrainingResult.from_dict(_load_json(args.gains))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed gains artifact: missing {exc}") from None
    regions = pipeline.calibrate(sc, ds, training, args.pac_beta)
    out = regions.to_dict()
    out["config"] = sc.raw
    _dump(out, args.out)
    print("radii: " + ", ".join(f"{n}={r:.4f}" for n, r in zip(regions.clique_names, regions.radii)))
    return EXIT_OK


def cmd_run(args) -> int:
    sc = load_scenario(args.config)
    training, regions = _load_artifacts(sc, args.gains, args.regions)
    prob = pipeline.build_problem(sc, regions)
    if args.zero_noise:
        w = [np.zeros((sc.N, n)) for n in sc.dims]
    elif args.disturbance:
        ds = ingest(args.disturbance, sc.M, sc.N, sc.dims)
        w = [s[0] for s in ds.samples]
    else:
        w = pipeline.realization(sc, args.seed)
    plans = initial_plans(prob)
    tr = pipeline.simulate(sc, prob, training.gains, w, plans)
    write_trace(tr, args.out)
    verdict = "satisfied" if tr.satisfied else "violated"
    print(f"robustness {tr.robustness:.6g}: {verdict}")
    if any(not p.feasible for p in plans.values()):
        bad = [i for i, p in plans.items() if not p.feasible]
        print(f"initial plans infeasible for agents {bad}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_verify(args) -> int:
    sc = load_scenario(args.config)
    training, regions = _load_artifacts(sc, args.gains, args.regions)
    vcfg = sc.verify
    n_runs = int(vcfg["n_runs"] if args.n_runs is None else args.n_runs)
    seed = int(vcfg["seed"] if args.seed is None else args.seed)
    prob = pipeline.build_problem(sc, regions)
    plans = initial_plans(prob)

    first = {}

    def keep_first(r, tr):
        if r == 0:
            first["trace"] = tr

    sat = monte_carlo_satisfaction(prob, training.gains, plans, n_runs, seed,
                                   pipeline.sampler(sc), sc.runtime_options, keep_first)

    trials = int(vcfg["coverage_trials"] if args.coverage_trials is None else args.coverage_trials)
    cov = coverage_experiment(lambda g, s: g.uniform(size=s), lambda q: min(max(q, 0.0), 1.0),
                              sc.theta, sc.split.k1, trials, seed) if trials > 0 else None

    sigma2 = float(sc.disturbance["sigma2"])
    base_prob = float(vcfg["baseline_prob"])
    try:
        base = union_bound_baseline(sigma2, training.gains, sc.dyns, sc.N, base_prob, norm="2")
        base_err = None
    except UnreachableTarget as exc:
        base, base_err = [float("nan")] * sc.M, str(exc)

    report = {
        "scenario": sc.name,
        "satisfaction": sat.to_dict(),
        "target_rate": 1.0 - sc.theta,
        "coverage": None if cov is None else cov.to_dict(),
        "baseline": {
            "method": "Gaussian tail per coordinate, union over time steps, coordinates and agents",
            "norm": "2",
            "probability": base_prob,
            "radii": base,
            "error": base_err,
            "table": pipeline.radius_table(regions, base, sc),
        },
        "regions": regions.to_dict(),
        "plans_feasible": {str(i): p.feasible for i, p in plans.items()},
        "config": sc.raw,
    }
    _dump(report, args.out)

    out = Path(args.out)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["run", "robustness", "satisfied"])
    for r, rho in enumerate(sat.robustness):
        wr.writerow([r, repr(float(rho)), int(rho >= 0.0)])
    csv_path.write_text(buf.getvalue(), encoding="utf-8")

    plot_path = out.with_name(out.stem + "_plot.json")
    counts, edges = np.histogram(sat.robustness, bins=30)
    plot = {
        "robustness_histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
        "coverage_histogram": None if cov is None else cov.to_dict()["histogram"],
        "beta_pdf": None if cov is None else {
            "x": np.linspace(0, 1, 201).tolist(),
            "pdf": stats.beta(*cov.beta_params).pdf(np.linspace(0, 1, 201)).tolist(),
        },
        "nominal_plans": {agent_signal(i): p.z[i].tolist() for i, p in plans.items()},
        "first_run": None if "trace" not in first else
        {agent_signal(i): x.tolist() for i, x in first["trace"].x.items()},
    }
    _dump(plot, plot_path)

    lo, hi = sat.wilson
    print(f"satisfaction {sat.successes}/{sat.n_runs} = {sat.rate:.4f} "
          f"(Wilson 95% [{lo:.4f}, {hi:.4f}], target {1 - sc.theta:.2f})")
    if cov is not None:
        print(f"coverage {cov.marginal:.4f} over {cov.n_trials} trials (exact {cov.exact_marginal:.4f})")
    for row in report["baseline"]["table"]:
        print(f"agent {row['agent']}: CP radius {row['cp_radius']:.4f} vs union bound "
              f"{row['baseline_radius']:.4f} at {base_prob:.0%}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpstl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a Gaussian disturbance dataset (CSV)")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="coordinate descent for gains and clique weights")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="conformal prediction regions from calibration data")
    c.add_argument("--config", required=True)
    c.add_argument("--dataset", required=True)
    c.add_argument("--gains", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--pac-beta", type=float, default=None,
                   help="calibrate at the PAC-adjusted level with confidence 1 - beta")
    c.set_defaults(func=cmd_calibrate)

    r = sub.add_parser("run", help="one distributed closed-loop run (JSONL trace)")
    r.add_argument("--config", required=True)
    r.add_argument("--gains", required=True)
    r.add_argument("--regions", required=True)
    r.add_argument("--out", required=True)
    src = r.add_mutually_exclusive_group()
    src.add_argument("--seed", type=int, default=0)
    src.add_argument("--disturbance", help="CSV realization; sample 0 is used")
    src.add_argument("--zero-noise", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="Monte Carlo satisfaction, coverage and baseline report")
    v.add_argument("--config", required=True)
    v.add_argument("--gains", required=True)
    v.add_argument("--regions", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--n-runs", type=int, default=None)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--coverage-trials", type=int, default=None)
    v.add_argument("--csv", default=None, help="per-run robustness CSV (default: next to --out)")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SynthesisInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, DatasetError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (LPError, SynthesisError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
