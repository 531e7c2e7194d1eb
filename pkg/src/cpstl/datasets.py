"""Disturbance datasets, train/calibration splits and error-trajectory sets."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .mas import CliqueSpec, FeedbackGains, StackedOperators, error_trajectory, trace_norm


class DatasetError(ValueError):
    pass


@dataclass
class DisturbanceDataset:
    """``samples[i - 1]`` holds agent ``i``'s sequences, shape ``(S, N, n_i)``."""

    samples: list[np.ndarray]
    provenance: str = ""

    def __post_init__(self):
        self.samples = [np.asarray(s, dtype=float) for s in self.samples]
        if not self.samples:
            raise DatasetError("dataset has no agents")
        shapes = [s.shape for s in self.samples]
        for i, s in enumerate(self.samples, start=1):
            if s.ndim != 3:
                raise DatasetError(f"agent {i}: expected (samples, N, n) array, got {s.shape}")
        if len({s[0] for s in shapes}) != 1:
            raise DatasetError(f"sample counts differ across agents: {[s[0] for s in shapes]}")
        if len({s[1] for s in shapes}) != 1:
            raise DatasetError(f"sequence lengths differ across agents: {[s[1] for s in shapes]}")

    @property
    def M(self) -> int:
        return len(self.samples)

    @property
    def N(self) -> int:
        return self.samples[0].shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples[0].shape[0]

    @property
    def dims(self) -> list[int]:
        return [s.shape[2] for s in self.samples]

    def subset(self, indices: Sequence[int]) -> "DisturbanceDataset":
        idx = np.asarray(indices, dtype=int)
        return DisturbanceDataset([s[idx] for s in self.samples], self.provenance)


@dataclass(frozen=True)
class DatasetSplit:
    """Sample 0 is the test point, ``1..k1`` calibrate, ``k1+1..k`` train."""

    k1: int
    k: int

    def __post_init__(self):
        if self.k1 < 1:
            raise DatasetError("need at least one calibration sample")
        if not self.k1 + 1 < self.k:
            raise DatasetError(f"split needs k1 + 1 < k, got k1={self.k1}, k={self.k}")

    @classmethod
    def from_counts(cls, n_cal: int, n_train: int) -> "DatasetSplit":
        return cls(n_cal, n_cal + n_train)

    @property
    def test(self) -> np.ndarray:
        return np.array([0])

    @property
    def calibration(self) -> np.ndarray:
        return np.arange(1, self.k1 + 1)

    @property
    def train(self) -> np.ndarray:
        return np.arange(self.k1 + 1, self.k + 1)

    @property
    def n_train(self) -> int:
        return self.k - self.k1

    @property
    def total(self) -> int:
        return self.k + 1


def generate_gaussian(M: int, N: int, dims: int | Sequence[int], sigma2: float,
                      n_samples: int, seed: int, ar: float | None = None) -> DisturbanceDataset:
    """i.i.d. zero-mean Gaussian sequences with covariance ``sigma2 * I``.

    With ``ar`` set, each sequence is a stationary AR(1) process
    ``w(t) = ar w(t-1) + sqrt(1 - ar^2) xi(t)`` with the same marginal law.
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if ar is not None and not -1.0 < ar < 1.0:
        raise ValueError("AR coefficient must lie in (-1, 1)")
    dims = [int(dims)] * M if np.isscalar(dims) else [int(d) for d in dims]
    if len(dims) != M:
        raise ValueError(f"{len(dims)} dimensions given for {M} agents")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(sigma2)
    samples = []
    for n in dims:
        xi = rng.standard_normal((n_samples, N, n))
        if ar is not None:
            w = np.empty_like(xi)
            w[:, 0] = xi[:, 0]
            c = math.sqrt(1.0 - ar * ar)
            for t in range(1, N):
                w[:, t] = ar * w[:, t - 1] + c * xi[:, t]
            xi = w
        samples.append(sd * xi)
    tag = f"gaussian(sigma2={sigma2!r}, seed={seed}" + (f", ar={ar!r})" if ar is not None else ")")
    return DisturbanceDataset(samples, tag)


def export_csv(ds: DisturbanceDataset, path: str | Path) -> None:
    """Write one row per (agent, sample, t); floats use shortest round-trip repr."""
    nmax = max(ds.dims)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["agent", "sample", "t"] + [f"dim_{d}" for d in range(nmax)])
    for i, s in enumerate(ds.samples, start=1):
        S, N, n = s.shape
        for k in range(S):
            for t in range(N):
                row = [i, k, t] + [repr(float(x)) for x in s[k, t]] + [""] * (nmax - n)
                wr.writerow(row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def ingest(path: str | Path, M: int | None = None, N: int | None = None,
           dims: Sequence[int] | None = None) -> DisturbanceDataset:
    """Read and validate a CSV dataset written by :func:`export_csv`."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["agent", "sample", "t"] or not header[3:]:
        raise DatasetError(f"{path}: bad header {header}")
    for d, h in enumerate(header[3:]):
        if h != f"dim_{d}":
            raise DatasetError(f"{path}: bad header column {h!r}, expected 'dim_{d}'")
    data: dict[int, dict[int, dict[int, list[float]]]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            i, k, t = (int(row[j]) for j in range(3))
        except (ValueError, IndexError):
            raise DatasetError(f"{path}:{lineno}: non-integer agent/sample/t in {row[:3]}") from None
        cells = [c.strip() for c in row[3:]]
        while cells and cells[-1] == "":
            cells.pop()
        if not cells or "" in cells:
            raise DatasetError(f"{path}:{lineno}: missing values for agent {i}, sample {k}, t {t}")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise DatasetError(
                f"{path}:{lineno}: non-numeric cell for agent {i}, sample {k}, t {t}"
            ) from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(f"{path}:{lineno}: non-finite value for agent {i}, sample {k}, t {t}")
        slot = data.setdefault(i, {}).setdefault(k, {})
        if t in slot:
            raise DatasetError(f"{path}:{lineno}: duplicate row for agent {i}, sample {k}, t {t}")
        slot[t] = vals

    agents = sorted(data)
    if agents != list(range(1, len(agents) + 1)):
        raise DatasetError(f"{path}: agents must be numbered 1..M, found {agents}")
    if M is not None and len(agents) != M:
        raise DatasetError(f"{path}: file has {len(agents)} agents, configuration expects {M}")
    samples = []
    n_seq = None
    for i in agents:
        seqs = data[i]
        ks = sorted(seqs)
        if ks != list(range(len(ks))):
            raise DatasetError(f"{path}: agent {i} samples must be numbered 0..S-1")
        if n_seq is None:
            n_seq = len(ks)
        elif len(ks) != n_seq:
            raise DatasetError(f"{path}: agent {i} has {len(ks)} samples, agent 1 has {n_seq}")
        length = N if N is not None else len(seqs[0])
        dim = None
        arr = []
        for k in ks:
            steps = seqs[k]
            for t in range(length):
                if t not in steps:
                    raise DatasetError(f"{path}: agent {i}, sample {k}: missing timestep {t}")
            extra = sorted(set(steps) - set(range(length)))
            if extra:
                raise DatasetError(
                    f"{path}: agent {i}, sample {k}: unexpected timestep {extra[0]} "
                    f"(sequence length {length})"
                )
            for t in range(length):
                if dim is None:
                    dim = len(steps[t])
                elif len(steps[t]) != dim:
                    raise DatasetError(
                        f"{path}: agent {i}, sample {k}, t {t}: {len(steps[t])} values, expected {dim}"
                    )
            arr.append([steps[t] for t in range(length)])
        if dims is not None and dim != dims[i - 1]:
            raise DatasetError(f"{path}: agent {i} has dimension {dim}, configuration expects {dims[i - 1]}")
        samples.append(np.asarray(arr, dtype=float))
    return DisturbanceDataset(samples, str(path))


@dataclass
class ErrorTrajectorySet:
    """Per-sample clique error norms ``||e_nu(1:N)||`` (rows follow ``indices``)."""

    norms: np.ndarray            # (S, n_cliques)
    agent_norms: np.ndarray      # (S, M)
    indices: np.ndarray
    clique_names: list[str]
    norm: str = "inf"
    trajectories: list[np.ndarray] | None = field(default=None, repr=False)


def agent_error_norms(ds: DisturbanceDataset, indices: Sequence[int],
                      ops: Sequence[StackedOperators], gains: FeedbackGains,
                      norm: str = "inf", keep: bool = False):
    idx = np.asarray(indices, dtype=int)
    norms, trajs = [], []
    for i, (op, G) in enumerate(zip(ops, gains.mats), start=1):
        e = error_trajectory(op, G, ds.samples[i - 1][idx])
        norms.append(trace_norm(e, norm))
        if keep:
            trajs.append(e)
    return np.stack(norms, axis=1), (trajs if keep else None)


def build_error_set(ds: DisturbanceDataset, indices: Sequence[int],
                    ops: Sequence[StackedOperators], gains: FeedbackGains,
                    cliques: Sequence[CliqueSpec], norm: str = "inf",
                    keep_trajectories: bool = False) -> ErrorTrajectorySet:
    """Error norms per clique for the selected samples.

    Under the inf-norm the clique norm is the max of its members' norms; under
    the 2-norm the member trajectories are stacked per time step first.
    """
    idx = np.asarray(indices, dtype=int)
    need_traj = keep_trajectories or norm not in ("inf", np.inf)
    agent_norms, trajs = agent_error_norms(ds, idx, ops, gains, norm, keep=need_traj)
    cols = []
    for c in cliques:
        members = [i - 1 for i in c.members]
        if norm in ("inf", np.inf):
            cols.append(agent_norms[:, members].max(axis=1))
        else:
            stacked = np.concatenate([trajs[j] for j in members], axis=-1)
            cols.append(trace_norm(stacked, norm))
    return ErrorTrajectorySet(
        norms=np.stack(cols, axis=1),
        agent_norms=agent_norms,
        indices=idx,
        clique_names=[c.name for c in cliques],
        norm="inf" if norm in ("inf", np.inf) else "2",
        trajectories=trajs if keep_trajectories else None,
    )
