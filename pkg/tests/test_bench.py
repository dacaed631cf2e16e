import json

import numpy as np
import pytest

from rankmin import bench
from rankmin.bench import ExperimentSpec, TrialRecord
from rankmin.linops import EnsembleSpec, generate, vec


def test_dof_and_fr_reference_values():
    assert bench.dof(150, 150, 44) == 11264
    assert bench.p_from_fr(40, 40, 9, 0.8) == 799
    assert round(9 * 71 / 0.8) == 799
    assert bench.dof(30, 30, 8) == 416
    assert bench.dof(20, 20, 5) == 175
    assert bench.dof(5, 5, 0) == 0 and bench.fr(0, 5, 5, 10) == 0


def test_fr_times_p_is_dof():
    for n, m, r, p in [(10, 12, 3, 77), (40, 40, 9, 799), (6, 6, 6, 36)]:
        assert bench.fr(r, n, m, p) * p == pytest.approx(bench.dof(n, m, r))
    with pytest.raises(ValueError):
        bench.fr(1, 3, 3, 0)


def test_gen_lowrank_rank_and_full_rank():
    for seed in range(100):
        X = bench.gen_lowrank(8, 6, 3, seed)
        s = np.linalg.svd(X, compute_uv=False)
        assert np.sum(s > 1e-9 * s[0]) == 3
        assert s[2] >= 0.1
    s = np.linalg.svd(bench.gen_lowrank(5, 5, 5, 0), compute_uv=False)
    assert np.sum(s > 1e-9 * s[0]) == 5
    with pytest.raises(ValueError):
        bench.gen_lowrank(3, 3, 4, 0)


def test_gen_lowrank_decay_rescales_spectrum():
    plain = np.linalg.svd(bench.gen_lowrank(10, 10, 4, 7), compute_uv=False)
    decayed = np.linalg.svd(bench.gen_lowrank(10, 10, 4, 7, decay=0.8), compute_uv=False)
    assert decayed[1] / decayed[0] == pytest.approx(2**-0.8 * plain[1] / plain[0], rel=1e-10)


def test_rel_examples():
    X = np.arange(1.0, 7.0).reshape(2, 3)
    assert bench.rel(X, X) == 0
    assert bench.rel(X, 0 * X) == 1
    assert bench.rel(X, 2 * X) == pytest.approx(1)
    with pytest.raises(ValueError):
        bench.rel(0 * X, X)


def test_fos_examples():
    assert bench.fos([0.0, 0.0]) == 1.0
    assert bench.fos([1.0, 1.0]) == 0.0
    assert bench.fos([1e-4, 1e-2]) == 0.5
    with pytest.raises(ValueError):
        bench.fos([])


def test_fors_examples():
    op = generate(EnsembleSpec("gaussian", 6, 6, 30, seed=1))
    X0 = bench.gen_lowrank(6, 6, 2, 1)
    b = op.apply(vec(X0))
    assert bench.fors(X0, 2, op, b)
    assert not bench.fors(X0 + 0.1 * np.ones((6, 6)), 2, op, b)
    U, s, Vt = np.linalg.svd(X0)
    s[2] = s[1] / 100
    X = (U * s) @ Vt
    assert not bench.fors(X, 2, op, op.apply(vec(X)))


def test_add_noise():
    x0 = np.zeros((100, 100))
    assert np.array_equal(bench.add_noise(x0, 0.0, 1), x0)
    y = bench.add_noise(x0, 0.1, 1)
    assert abs(y.mean()) < 0.05 * 0.1
    assert y.std() == pytest.approx(0.1, rel=0.05)
    assert np.array_equal(y, bench.add_noise(x0, 0.1, 1))
    with pytest.raises(ValueError):
        bench.add_noise(x0, -1.0, 0)


def test_trial_seed_is_stable_and_distinct():
    a = bench.trial_seed(0, 10, 10, 2, 50, "completion", 0)
    assert a == bench.trial_seed(0, 10, 10, 2, 50, "completion", 0)
    assert a != bench.trial_seed(0, 10, 10, 2, 50, "completion", 1)
    assert a != bench.trial_seed(0, 10, 10, 2, 50, "gaussian", 0)
    assert 0 <= a < 2**64


def test_covered_completion():
    op = bench.covered_completion(6, 5, 8, 3)
    assert set(op.rows.tolist()) == set(range(6)) and set(op.cols.tolist()) == set(range(5))
    with pytest.raises(ValueError):
        bench.covered_completion(6, 5, 4, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("completion", 5, 5, ranks=())
    with pytest.raises(ValueError):
        ExperimentSpec("completion", 5, 5, ranks=(1,), p=10, fr=0.5)
    with pytest.raises(ValueError):
        ExperimentSpec("completion", 5, 5, ranks=(6,), p=10)
    with pytest.raises(ValueError):
        ExperimentSpec("completion", 5, 5, ranks=(1,), p=10, algorithms=("magic",))
    with pytest.raises(ValueError):
        ExperimentSpec("completion", 5, 5, ranks=(1,), p=30)
    spec = ExperimentSpec("completion", 30, 30, ranks=(1,), observed_fraction=0.5)
    assert spec.p_for(1) == 450
    spec = ExperimentSpec("completion", 40, 40, ranks=(9,), fr=0.8)
    assert spec.p_for(9) == 799


SMALL = ExperimentSpec("completion", 8, 8, ranks=(1, 2), p=40, trials=2, algorithms=("barm", "irls0"))


def test_single_record():
    spec = ExperimentSpec("completion", 6, 6, ranks=(1,), p=20, trials=1)
    recs = bench.run_sweep(spec)
    assert len(recs) == 1
    r = recs[0]
    assert r.rel >= 0 and (not r.fos_success or r.rel < 1e-3)


def test_sweep_deterministic_and_ordered():
    a = bench.run_sweep(SMALL)
    b = bench.run_sweep(SMALL)
    assert [x.key for x in a] == [(r, t, g) for r in (1, 2) for t in range(2) for g in ("barm", "irls0")]
    strip = [{k: v for k, v in vars(x).items() if k != "wall_ms"} for x in a]
    assert strip == [{k: v for k, v in vars(x).items() if k != "wall_ms"} for x in b]
    # both algorithms see the same instance
    assert a[0].seed == a[1].seed


def test_sweep_parallel_matches_serial():
    a = bench.run_sweep(SMALL, threads=2)
    b = bench.run_sweep(SMALL)
    assert [(x.key, x.rel) for x in a] == [(x.key, x.rel) for x in b]


def test_sweep_skip_and_failure_recording(monkeypatch):
    recs = bench.run_sweep(SMALL, skip={(1, 0, "barm")})
    assert (1, 0, "barm") not in [x.key for x in recs]

    def boom(*args):
        raise RuntimeError("solver exploded")

    monkeypatch.setattr(bench, "run_algorithm", boom)
    recs = bench.run_sweep(ExperimentSpec("completion", 6, 6, ranks=(1,), p=20, trials=2))
    assert len(recs) == 2 and all("exploded" in r.error for r in recs)
    assert not any(r.fos_success for r in recs)


def test_fos_implies_fors_noiseless():
    recs = bench.run_sweep(ExperimentSpec("gaussian", 8, 8, ranks=(2,), p=40, trials=5))
    for r in recs:
        assert not r.fos_success or r.fors_success


def test_jsonl_roundtrip_and_summary(tmp_path):
    recs = bench.run_sweep(SMALL)
    path = tmp_path / "r.jsonl"
    bench.write_jsonl(recs, path)
    first = json.loads(path.read_text().splitlines()[0])
    assert list(first) == ["n", "m", "r", "p", "kind", "trial", "seed", "algorithm", "rel", "fos_success",
                           "fors_success", "est_rank", "iterations", "wall_ms", "residual", "error"]
    back = bench.read_jsonl(path)
    assert [vars(x) for x in back] == [vars(x) for x in recs]
    rows = bench.summarize(recs)
    assert len(rows) == 4
    row = rows[0]
    cell = [x for x in recs if x.r == row["r"] and x.algorithm == row["algo"]]
    assert row["fos"] == bench.fos(cell)
    bench.write_summary_csv(rows, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == ",".join(bench.SUMMARY_COLUMNS)


def test_read_jsonl_names_bad_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"n": 1}\n')
    with pytest.raises(ValueError, match=":1:"):
        bench.read_jsonl(path)


def test_failure_spectrum(tmp_path):
    base = dict(n=3, m=3, r=1, p=5, kind="completion", seed=0, algorithm="barm", rel=0.5, fos_success=False,
                fors_success=False, est_rank=2, iterations=1, wall_ms=0.0, residual=0.0)
    recs = [TrialRecord(trial=0, **base), TrialRecord(trial=1, **base)]
    X = np.diag([3.0, 2.0, 1.0])
    assert bench.failure_spectrum(recs, tmp_path).size == 0
    np.save(tmp_path / bench.archive_name(recs[0]), X)
    assert np.allclose(bench.failure_spectrum(recs, tmp_path), [3, 2, 1])
    np.save(tmp_path / bench.archive_name(recs[1]), X)
    assert np.allclose(bench.failure_spectrum(recs, tmp_path), [3, 2, 1])


def test_archive_written_for_failures(tmp_path):
    spec = ExperimentSpec("completion", 6, 6, ranks=(3,), p=14, trials=2, algorithms=("nuclear",))
    recs = bench.run_sweep(spec, archive_dir=tmp_path)
    fails = [r for r in recs if not r.fos_success]
    assert fails
    assert all((tmp_path / bench.archive_name(r)).exists() for r in fails)
    assert bench.failure_spectrum(recs, tmp_path).size == 6
