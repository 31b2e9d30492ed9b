import json
import subprocess
import sys

import numpy as np
import pytest

from cgbench import io as cio
from cgbench.cli import main
from cgbench.grouping import METHODS


@pytest.fixture
def pair_dir(tmp_path):
    d = tmp_path / "pair"
    assert main(["gen", "--out", str(d), "--inlier-ratio", "0.3", "--n", "200", "--seed", "1"]) == 0
    return d


def test_version_and_help(capsys):
    assert main(["--version"]) == 0
    assert "0.1.0" in capsys.readouterr().out
    assert main(["--help"]) == 0
    assert "bench" in capsys.readouterr().out


def test_gen_writes_pair(pair_dir):
    assert {p.name for p in pair_dir.iterdir()} == {"source.ply", "target.ply", "gt.txt", "meta.json",
                                                   "corr.json"}
    meta = json.loads((pair_dir / "meta.json").read_text())
    assert meta["nuisance"] == "inlier_ratio" and meta["seed"] == 1
    assert sum(meta["labels"]) == 60


def test_group_writes_valid_result(pair_dir, tmp_path):
    out = tmp_path / "res.json"
    assert main(["group", "--method", "gc", "--in", str(pair_dir / "corr.json"), "--out", str(out)]) == 0
    obj = json.loads(out.read_text())
    cio.validate_grouping_json(obj)
    assert obj["method"] == "gc"


def test_group_stdout_only_with_dash(pair_dir, tmp_path, capsys):
    main(["group", "--method", "ss", "--in", str(pair_dir / "corr.json"), "--out", str(tmp_path / "r.json")])
    assert capsys.readouterr().out == ""
    main(["group", "--method", "ss", "--in", str(pair_dir / "corr.json"), "--out", "-"])
    assert json.loads(capsys.readouterr().out)["method"] == "ss"


def test_unknown_method_is_usage_error(pair_dir, capsys):
    code = main(["group", "--method", "magic", "--in", str(pair_dir / "corr.json"), "--out", "-"])
    assert code == 1
    err = capsys.readouterr().err
    assert all(m in err for m in METHODS)


def test_unknown_flag_is_usage_error(capsys):
    assert main(["report", "--bogus"]) == 1


def test_malformed_input_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["group", "--method", "gc", "--in", str(bad), "--out", "-"]) == 2
    err = capsys.readouterr().err.strip()
    assert err and "\n" not in err
    assert main(["group", "--method", "gc", "--in", str(tmp_path / "missing.json"), "--out", "-"]) == 2


def test_conflicting_flags(pair_dir, capsys):
    assert main(["bench", "--load-pair", str(pair_dir), "--inlier-ratio", "0.2", "--out", "-"]) == 1
    assert "conflicts" in capsys.readouterr().err


def test_bench_load_pair(pair_dir, capsys):
    assert main(["bench", "--load-pair", str(pair_dir), "--method", "gc,ss", "--out", "-"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("method,nuisance,level")
    assert len(lines) == 3 and lines[1].startswith("gc,inlier_ratio,0.2999")


def test_bench_config_with_flag_override(tmp_path):
    cfg = {"methods": ["ss", "gc"], "levels": [0.3], "n_corr": 100, "warmup": 0, "timing_runs": 1,
           "rng_seed": 5}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "rep"
    assert main(["bench", "--config", str(tmp_path / "cfg.json"), "--out", str(out), "--seed", "7",
                 "--tau-reg", "0.2"]) == 0
    js = json.loads((out / "report.json").read_text())
    assert js["config"]["rng_seed"] == 7 and js["config"]["tau_reg"] == 0.2
    assert (out / "report.md").read_text().startswith("## inlier_ratio")


def test_bench_needs_output(capsys):
    assert main(["bench", "--n", "50"]) == 1


def test_bench_bad_config_is_runtime_error(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"levels": [0.3], "unknown_key": 1}))
    assert main(["bench", "--config", str(tmp_path / "cfg.json"), "--out", "-"]) == 2


def test_report_from_csv(tmp_path, capsys):
    out = tmp_path / "rep"
    main(["bench", "--method", "ss", "--n", "100", "--out", str(out)])
    assert main(["report", "--in", str(out / "report.csv"), "--out", "-"]) == 0
    assert capsys.readouterr().out.startswith("## inlier_ratio")


def test_perturb_and_match(tmp_path):
    d = tmp_path / "clouds"
    assert main(["gen", "--out", str(d), "--n", "1200", "--seed", "2"]) == 0
    noisy = tmp_path / "noisy.ply"
    assert main(["perturb", "--in", str(d / "target.ply"), "--out", str(noisy), "--sigma-pr", "0.1",
                 "--keep-ratio", "0.8"]) == 0
    assert len(cio.read_ply(noisy)) == 960
    corr = tmp_path / "c.json"
    assert main(["match", "--in", str(d / "source.ply"), str(noisy), "--out", str(corr),
                 "--support-radius-pr", "12"]) == 0
    cs = cio.load_correspondences(corr)
    assert len(cs) > 0 and cs.has_lrfs
    assert main(["match", "--in", str(d), "--out", str(corr), "--descriptor", "oracle"]) == 0
    assert main(["group", "--method", "si", "--pair", str(d), "--in", str(corr), "--out", "-"]) == 0


def test_gen_overlap_pair(tmp_path):
    d = tmp_path / "ov"
    assert main(["gen", "--out", str(d), "--overlap", "0.6", "--keep-ratio", "0.9", "--seed", "3"]) == 0
    meta = json.loads((d / "meta.json").read_text())
    assert meta["overlap"] == 0.6 and "density" in meta["nuisance"]


def test_seed_controls_randomness(tmp_path):
    for name, seed in (("a", "4"), ("b", "4"), ("c", "5")):
        main(["gen", "--out", str(tmp_path / name), "--inlier-ratio", "0.2", "--n", "50", "--seed", seed])
    a, b, c = (cio.load_correspondences(tmp_path / n / "corr.json") for n in "abc")
    assert np.array_equal(a.src, b.src) and not np.array_equal(a.src, c.src)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "cgbench", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "cgbench" in res.stdout
    res = subprocess.run([sys.executable, "-m", "cgbench", "group", "--method", "x"],
                         capture_output=True, text=True)
    assert res.returncode == 1
