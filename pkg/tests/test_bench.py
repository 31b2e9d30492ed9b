import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from cgbench.bench import (
    CSV_COLUMNS,
    BenchConfig,
    aggregate,
    label_ground_truth,
    read_csv,
    registration_success,
    run_benchmark,
    score,
    transform_error,
)
from cgbench.features import CorrespondenceSet
from cgbench.geometry import RigidTransform, axis_angle_rotation, random_rotation


def strip_elapsed(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


# --- labelling and metrics -------------------------------------------------------------

def test_label_boundary_inclusive():
    cs = CorrespondenceSet([[0, 0, 0], [0, 0, 0], [0, 0, 0]], [[0, 0, 0], [5, 0, 0], [5.0000001, 0, 0]],
                           [1, 1, 1], [1, 1, 1])
    assert label_ground_truth(cs, RigidTransform.identity(), 5.0).tolist() == [True, True, False]
    with pytest.raises(ValueError):
        label_ground_truth(cs, RigidTransform.identity(), 0.0)


def test_score_examples():
    labels = np.zeros(40, dtype=bool)
    labels[:20] = True
    assert score(range(20), labels) == (1.0, 1.0, 1.0)
    assert score([], labels) == (0.0, 0.0, 0.0)
    p, r, f = score(list(range(15, 25)), labels)
    assert (p, r) == (0.5, 0.25) and f == pytest.approx(1 / 3, abs=1e-15)


def test_score_no_inliers_conventions():
    labels = np.zeros(5, dtype=bool)
    assert score([], labels) == (0.0, 1.0, 0.0)
    assert score([1], labels) == (0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.data())
def test_score_permutation_invariant_and_fscore(labels, data):
    sel = data.draw(st.lists(st.integers(0, len(labels) - 1), max_size=len(labels), unique=True))
    p, r, f = score(sel, labels)
    assert score(list(reversed(sel)), labels) == (p, r, f)
    if p + r == 0:
        assert f == 0
    else:
        assert abs(f - 2 * p * r / (p + r)) <= 1e-12
    assert 0 <= p <= 1 and 0 <= r <= 1


def test_registration_success_strict():
    assert registration_success(0.5, 0.1)
    assert not registration_success(0.1, 0.1)
    assert not registration_success(0.0, 0.1)


def test_transform_error_examples():
    rng = np.random.default_rng(0)
    gt = RigidTransform.random(rng, 3)
    rot, trans = transform_error(gt, gt)
    assert rot == pytest.approx(0, abs=1e-6) and trans == 0
    est = RigidTransform(axis_angle_rotation([0, 0, 1], np.radians(10)) @ gt.rotation, gt.translation)
    rot, trans = transform_error(est, gt)
    assert rot == pytest.approx(10, abs=1e-9) and trans == 0


def test_transform_error_quaternion_oracle():
    rng = np.random.default_rng(1)
    for _ in range(500):
        a = RigidTransform(random_rotation(rng), rng.normal(size=3))
        b = RigidTransform(random_rotation(rng), rng.normal(size=3))
        oracle = np.degrees(Rotation.from_matrix(a.rotation @ b.rotation.T).magnitude())
        assert abs(transform_error(a, b)[0] - oracle) < 1e-6


# --- config -----------------------------------------------------------------------

def test_config_defaults_and_validation():
    cfg = BenchConfig()
    assert cfg.epsilon_pr == 5.0 and cfg.tau_reg == 0.1
    for bad in ({"tau_reg": 0}, {"tau_reg": 1.5}, {"epsilon_pr": 0}, {"repetitions": 0},
                {"methods": ["zz"]}, {"nuisance": "wind"}, {"params": {"nope": 1}}, {"extra": 1}):
        with pytest.raises(ValueError):
            BenchConfig.from_dict(bad)


# --- runs -------------------------------------------------------------------------

FAST = dict(warmup=0, timing_runs=1)


def test_all_inlier_single_row():
    cfg = BenchConfig(methods=["gc"], levels=[1.0], repetitions=1, pos_sigma_pr=0.0, n_corr=100, **FAST)
    rep = run_benchmark(cfg)
    assert len(rep.rows) == 1
    assert rep.rows[0].fscore == 1.0 and rep.rows[0].reg_success


def test_repetitions_deterministic():
    cfg = BenchConfig(methods=["ss", "gc", "gtm", "cv"], levels=[0.3, 0.1], repetitions=5, n_corr=200,
                      rng_seed=3, **FAST)
    a, b = run_benchmark(cfg), run_benchmark(cfg)
    assert strip_elapsed(a.csv_text()) == strip_elapsed(b.csv_text())
    assert len(a.rows) == 2 * 5 * 4


def test_csv_header_and_round_trip(tmp_path):
    cfg = BenchConfig(methods=["ss", "nnsr"], levels=[0.5, 0.2], repetitions=2, n_corr=150,
                      csv_path=str(tmp_path / "r.csv"), json_path=str(tmp_path / "r.json"),
                      md_path=str(tmp_path / "r.md"), **FAST)
    rep = run_benchmark(cfg)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_csv(tmp_path / "r.csv")
    assert [(r.precision, r.recall, r.fscore, r.reg_success) for r in rows] == \
        [(r.precision, r.recall, r.fscore, r.reg_success) for r in rep.rows]
    assert aggregate(rows) == aggregate([replace(r, error=None) for r in rep.rows])
    js = json.loads((tmp_path / "r.json").read_text())
    assert js["config"]["methods"] == ["ss", "nnsr"] and len(js["rows"]) == 8
    md = (tmp_path / "r.md").read_text()
    assert md.startswith("## inlier_ratio") and md.count("| ss |") == 2


def test_aggregation_matches_rows():
    cfg = BenchConfig(methods=["gc"], levels=[0.2], repetitions=4, n_corr=150, **FAST)
    rep = run_benchmark(cfg)
    (summary,) = rep.summary
    assert summary["fscore"] == pytest.approx(np.mean([r.fscore for r in rep.rows]), abs=1e-15)
    assert summary["runs"] == 4


def test_method_failure_is_recorded(monkeypatch):
    import cgbench.grouping as grouping

    def broken(cset, params, ctx):
        raise RuntimeError("boom")

    monkeypatch.setitem(grouping.GROUPERS, "st", broken)
    cfg = BenchConfig(methods=["st", "gc"], levels=[0.5], n_corr=100, **FAST)
    bad, good = run_benchmark(cfg).rows
    assert "boom" in bad.error
    assert (bad.precision, bad.recall, bad.fscore, bad.reg_success) == (0, 0, 0, False)
    assert good.error is None and good.fscore > 0


def test_generation_failure_is_recorded():
    rows = run_benchmark(BenchConfig(methods=["gc"], nuisance="n_matches", levels=[2], **FAST)).rows
    assert rows[0].error.startswith("pair generation failed")


def test_parallel_jobs_same_metrics():
    cfg = BenchConfig(methods=["gc", "ss"], levels=[0.3, 0.1], repetitions=2, n_corr=150, **FAST)
    a = run_benchmark(cfg)
    b = run_benchmark(replace(cfg, jobs=2))
    assert strip_elapsed(a.csv_text()) == strip_elapsed(b.csv_text())


def test_elapsed_non_negative():
    cfg = BenchConfig(methods=["st"], levels=[0.2], n_corr=100, warmup=1, timing_runs=3)
    assert all(r.elapsed >= 0 for r in run_benchmark(cfg).rows)


@pytest.mark.parametrize("nuisance,level", [
    ("lrf_jitter", 5.0), ("density", 0.5), ("overlap", 0.7), ("epsilon", 3.0), ("nms_radius", 4.0),
    ("clutter", 0.5), ("occlusion", 0.3), ("descriptor_corruption", 0.3), ("noise", 0.2),
])
def test_each_nuisance_runs(nuisance, level):
    cfg = BenchConfig(methods=["gc", "3dhv"], nuisance=nuisance, levels=[level], cloud_points=1200,
                      n_corr=200, **FAST)
    rows = run_benchmark(cfg).rows
    assert len(rows) == 2 and all(r.error is None for r in rows)
    assert all(r.n_corr > 0 for r in rows)


@pytest.mark.slow
def test_ss_noise_trend_retrieval():
    levels = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45]
    cfg = BenchConfig(methods=["ss"], nuisance="noise", levels=levels, repetitions=10,
                      cloud_points=4000, **FAST)
    f = [s["fscore"] for s in run_benchmark(cfg).summary]
    violations = sum(b > a for a, b in zip(f, f[1:]))
    assert violations <= 1, f
