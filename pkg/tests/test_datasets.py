import numpy as np
import pytest

from cpstl.datasets import (
    DatasetError, DatasetSplit, DisturbanceDataset, build_error_set, export_csv,
    generate_gaussian, ingest,
)
from cpstl.mas import AgentDynamics, CliqueSpec, FeedbackGains, build_stacked
from cpstl.uq import conformal_quantile, score_dataset


def test_generation_is_deterministic(tmp_path):
    a = generate_gaussian(3, 5, 2, 0.05, 10, seed=7)
    b = generate_gaussian(3, 5, 2, 0.05, 10, seed=7)
    export_csv(a, tmp_path / "a.csv")
    export_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = generate_gaussian(3, 5, 2, 0.05, 10, seed=8)
    assert not np.array_equal(a.samples[0], c.samples[0])


def test_generated_variance():
    ds = generate_gaussian(1, 1000, 1, 0.05, 100, seed=0)
    assert ds.samples[0].var() == pytest.approx(0.05, rel=0.02)


def test_ar_option_keeps_marginal_and_correlates():
    ds = generate_gaussian(1, 200, 1, 0.05, 500, seed=1, ar=0.8)
    w = ds.samples[0][..., 0]
    assert w.var() == pytest.approx(0.05, rel=0.05)
    lag1 = np.mean(w[:, 1:] * w[:, :-1]) / w.var()
    assert lag1 == pytest.approx(0.8, abs=0.03)


def test_generation_rejects_bad_sigma():
    with pytest.raises(ValueError):
        generate_gaussian(1, 2, 1, 0.0, 3, seed=0)


def test_split_indices():
    sp = DatasetSplit.from_counts(100, 100)
    assert sp.total == 201
    assert sp.calibration[0] == 1 and sp.calibration[-1] == 100
    assert sp.train[0] == 101 and sp.train[-1] == 200
    allidx = np.concatenate([sp.test, sp.calibration, sp.train])
    assert sorted(allidx.tolist()) == list(range(201))
    with pytest.raises(DatasetError):
        DatasetSplit(5, 6)


def test_csv_round_trip_exact(tmp_path):
    ds = generate_gaussian(2, 4, [2, 3], 0.05, 5, seed=3)
    export_csv(ds, tmp_path / "d.csv")
    back = ingest(tmp_path / "d.csv", M=2, N=4, dims=[2, 3])
    for a, b in zip(ds.samples, back.samples):
        assert np.array_equal(a, b)


def _write(tmp_path, rows, header="agent,sample,t,dim_0"):
    p = tmp_path / "bad.csv"
    p.write_text(header + "\n" + "\n".join(rows) + "\n")
    return p


def test_ingest_missing_timestep_names_sample(tmp_path):
    p = _write(tmp_path, ["1,0,0,0.1", "1,0,1,0.2", "1,1,0,0.3"])
    with pytest.raises(DatasetError, match=r"sample 1: missing timestep 1"):
        ingest(p, N=2)


def test_ingest_non_numeric(tmp_path):
    p = _write(tmp_path, ["1,0,0,abc"])
    with pytest.raises(DatasetError, match=r"non-numeric.*sample 0, t 0"):
        ingest(p)


def test_ingest_config_mismatch(tmp_path):
    ds = generate_gaussian(2, 3, 1, 0.05, 2, seed=0)
    export_csv(ds, tmp_path / "d.csv")
    with pytest.raises(DatasetError, match="expects 3"):
        ingest(tmp_path / "d.csv", M=3)
    with pytest.raises(DatasetError, match="dimension"):
        ingest(tmp_path / "d.csv", M=2, dims=[2, 2])


def test_error_set_memoryless():
    dyn = AgentDynamics([[0.0]], [[1.0]], [0.0])
    ds = generate_gaussian(1, 6, 1, 1.0, 4, seed=2)
    ops = [build_stacked(dyn, 6)]
    es = build_error_set(ds, [0, 1, 2, 3], ops, FeedbackGains.zeros([dyn], 6), [CliqueSpec((1,))])
    assert np.allclose(es.norms[:, 0], np.abs(ds.samples[0][..., 0]).max(axis=1))


def test_error_set_clique_norm_is_member_max(rng):
    dyns = [AgentDynamics(np.eye(2), np.eye(2), np.zeros(2)) for _ in range(2)]
    ds = generate_gaussian(2, 5, 2, 0.1, 8, seed=4)
    ops = [build_stacked(d, 5) for d in dyns]
    cl = [CliqueSpec((1,)), CliqueSpec((2,)), CliqueSpec((1, 2))]
    es = build_error_set(ds, range(8), ops, FeedbackGains.zeros(dyns, 5), cl)
    assert np.array_equal(es.norms[:, 2], np.maximum(es.norms[:, 0], es.norms[:, 1]))
    es2 = build_error_set(ds, range(8), ops, FeedbackGains.zeros(dyns, 5), cl, norm="2")
    assert np.all(es2.norms[:, 2] >= es2.norms[:, 0] - 1e-12)


def test_split_isolation():
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    ds = generate_gaussian(1, 4, 1, 1.0, 9, seed=5)
    sp = DatasetSplit(4, 8)
    ops = [build_stacked(dyn, 4)]
    gains = FeedbackGains.zeros([dyn], 4)
    before = build_error_set(ds, sp.train, ops, gains, [CliqueSpec((1,))]).norms
    altered = [s.copy() for s in ds.samples]
    altered[0][sp.calibration] += 100.0
    after = build_error_set(DisturbanceDataset(altered), sp.train, ops, gains,
                            [CliqueSpec((1,))]).norms
    assert np.array_equal(before, after)


def test_quantile_invariant_to_permutation(rng):
    dyn = AgentDynamics([[1.0]], [[1.0]], [0.0])
    ds = generate_gaussian(1, 5, 1, 1.0, 50, seed=6)
    ops = [build_stacked(dyn, 5)]
    es = build_error_set(ds, range(50), ops, FeedbackGains.zeros([dyn], 5), [CliqueSpec((1,))])
    perm = rng.permutation(50)
    es_p = build_error_set(ds.subset(perm), range(50), ops, FeedbackGains.zeros([dyn], 5),
                           [CliqueSpec((1,))])
    q = conformal_quantile(score_dataset(es, [1.0]), 0.1)
    assert q == conformal_quantile(score_dataset(es_p, [1.0]), 0.1)
