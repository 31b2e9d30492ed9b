"""Ground-truth labelling, metrics, nuisance sweeps and report emission."""
from __future__ import annotations

import csv
import io
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .features import CorrespondenceSet, extract_and_match
from .geometry import RigidTransform
from .grouping import METHODS, GrouperParams, GroupingContext, run_method
from .synthdata import (
    ScoreModel,
    SyntheticPair,
    add_gaussian_noise,
    bumpy_cloud,
    clutter_occlusion_metrics,
    compose_scene,
    downsample_random,
    make_partial_pair,
    synth_correspondences,
)

CSV_COLUMNS = ("method", "nuisance", "level", "seed", "n_corr", "n_inliers", "inlier_ratio",
               "precision", "recall", "fscore", "reg_success", "elapsed_s")

# sweeps over fabricated correspondence sets
SYNTHETIC_NUISANCES = ("inlier_ratio", "n_matches", "lrf_jitter")
# sweeps that run detection + description + matching on point clouds
CLOUD_NUISANCES = ("noise", "density", "overlap", "epsilon", "nms_radius", "clutter",
                   "occlusion", "descriptor_corruption")
NUISANCES = SYNTHETIC_NUISANCES + CLOUD_NUISANCES


# ---------------------------------------------------------------------------
# metrics


def label_ground_truth(cset: CorrespondenceSet, gt: RigidTransform, eps: float) -> np.ndarray:
    """True where the gt-mapped source keypoint lies within eps of its match."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if len(cset) == 0:
        return np.zeros(0, dtype=bool)
    return np.linalg.norm(gt.apply(cset.src) - cset.dst, axis=1) <= eps


def score(selected, labels) -> tuple[float, float, float]:
    """(precision, recall, fscore) of a selection against inlier labels.

    An empty selection has precision 0. With no inliers at all, recall is 1
    for an empty selection and 0 otherwise.
    """
    labels = np.asarray(labels, dtype=bool)
    sel = np.unique(np.asarray(selected, dtype=int))
    if len(sel) and (sel.min() < 0 or sel.max() >= len(labels)):
        raise IndexError("selected index out of range")
    hits = int(labels[sel].sum())
    total = int(labels.sum())
    precision = hits / len(sel) if len(sel) else 0.0
    if total:
        recall = hits / total
    else:
        recall = 1.0 if len(sel) == 0 else 0.0
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return float(precision), float(recall), float(f)


def registration_success(precision: float, tau_reg: float = 0.1) -> bool:
    return bool(precision > tau_reg)


def transform_error(est: RigidTransform, gt: RigidTransform) -> tuple[float, float]:
    """Rotation error (deg, trace formula) and translation error."""
    c = (np.trace(est.rotation @ gt.rotation.T) - 1.0) / 2.0
    rot = float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return rot, float(np.linalg.norm(est.translation - gt.translation))


# ---------------------------------------------------------------------------
# configuration and results


@dataclass
class BenchConfig:
    methods: list = field(default_factory=lambda: list(METHODS))
    nuisance: str = "inlier_ratio"
    levels: list = field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05, 0.02])
    epsilon_pr: float = 5.0
    tau_reg: float = 0.1
    repetitions: int = 1
    rng_seed: int = 0
    params: dict = field(default_factory=dict)
    csv_path: str | None = None
    json_path: str | None = None
    md_path: str | None = None
    pair_dir: str | None = None
    # fabricated correspondence sets
    n_corr: int = 1000
    inlier_ratio: float = 0.1
    extent_pr: float = 300.0
    pos_sigma_pr: float = 0.5
    lrf_jitter_deg: float = 0.0
    scores: dict = field(default_factory=dict)
    # point-cloud scenarios
    cloud_points: int = 2000
    noise_pr: float = 0.0
    nms_radius_pr: float = 3.0
    support_radius_pr: float = 15.0
    descriptor: str = "reference"
    oracle_corrupt: float = 0.0
    target_keypoints: str = "detect"
    # timing protocol
    warmup: int = 1
    timing_runs: int = 3
    jobs: int = 1

    def __post_init__(self):
        self.methods = list(self.methods)
        self.levels = [float(v) for v in self.levels]
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown method(s) {bad}; valid: {', '.join(METHODS)}")
        if self.nuisance not in NUISANCES:
            raise ValueError(f"unknown nuisance {self.nuisance!r}; valid: {', '.join(NUISANCES)}")
        if not self.levels:
            raise ValueError("levels must not be empty")
        if not 0 < self.tau_reg <= 1:
            raise ValueError("tau_reg must lie in (0, 1]")
        if not self.epsilon_pr > 0:
            raise ValueError("epsilon_pr must be positive")
        if int(self.repetitions) < 1:
            raise ValueError("repetitions must be >= 1")
        if self.timing_runs < 1 or self.warmup < 0 or self.jobs < 1:
            raise ValueError("timing_runs and jobs must be >= 1, warmup >= 0")
        self.repetitions = int(self.repetitions)
        GrouperParams.from_dict(self.params)  # fail early on bad overrides
        ScoreModel(**{k: tuple(v) for k, v in self.scores.items()})

    def grouper_params(self) -> GrouperParams:
        return GrouperParams.from_dict(self.params)

    def score_model(self) -> ScoreModel:
        return ScoreModel(**{k: tuple(v) for k, v in self.scores.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BenchConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> BenchConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PairResult:
    method: str
    nuisance: str
    level: float
    seed: int
    n_corr: int
    n_inliers: int
    precision: float
    recall: float
    fscore: float
    reg_success: bool
    elapsed: float
    error: str | None = None

    @property
    def inlier_ratio(self) -> float:
        return self.n_inliers / self.n_corr if self.n_corr else 0.0

    def csv_row(self) -> list[str]:
        g = lambda v: format(float(v), ".17g")  # noqa: E731
        return [self.method, self.nuisance, g(self.level), str(self.seed), str(self.n_corr),
                str(self.n_inliers), g(self.inlier_ratio), g(self.precision), g(self.recall),
                g(self.fscore), "1" if self.reg_success else "0", g(self.elapsed)]

    def to_json(self) -> dict:
        d = {c: v for c, v in zip(CSV_COLUMNS, self.csv_row())}
        d.update(level=self.level, seed=self.seed, n_corr=self.n_corr, n_inliers=self.n_inliers,
                 inlier_ratio=self.inlier_ratio, precision=self.precision, recall=self.recall,
                 fscore=self.fscore, reg_success=self.reg_success, elapsed_s=self.elapsed)
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class Report:
    config: BenchConfig
    rows: list[PairResult]

    @property
    def summary(self) -> list[dict]:
        return aggregate(self.rows)

    def csv_text(self) -> str:
        return rows_to_csv(self.rows)

    def to_json(self) -> dict:
        return {"config": self.config.to_dict(), "rows": [r.to_json() for r in self.rows],
                "summary": self.summary}

    def markdown(self) -> str:
        return markdown_summary(self.rows)

    def write(self):
        if self.config.csv_path:
            Path(self.config.csv_path).write_text(self.csv_text())
        if self.config.json_path:
            Path(self.config.json_path).write_text(json.dumps(self.to_json(), indent=1))
        if self.config.md_path:
            Path(self.config.md_path).write_text(self.markdown())


# ---------------------------------------------------------------------------
# scenarios


def _case_seed(config: BenchConfig, rep: int) -> int:
    # the same base pair is reused across levels, so sweeps vary one knob only
    return int(config.rng_seed) * 1000 + rep


def build_case(config: BenchConfig, level: float, seed: int):
    """Correspondence set, gt pose and label tolerance (length) for one cell."""
    rng = np.random.default_rng(seed)
    gt = RigidTransform.random(rng, max_translation=1.0)
    nz = config.nuisance
    if nz in SYNTHETIC_NUISANCES:
        kw = dict(n=config.n_corr, inlier_ratio=config.inlier_ratio,
                  lrf_jitter_deg=config.lrf_jitter_deg)
        if nz == "inlier_ratio":
            kw["inlier_ratio"] = level
        elif nz == "n_matches":
            kw["n"] = int(level)
        else:
            kw["lrf_jitter_deg"] = level
        gt = RigidTransform(gt.rotation, gt.translation * config.extent_pr)
        cset, labels = synth_correspondences(
            kw["n"], kw["inlier_ratio"], gt, config.pos_sigma_pr, config.extent_pr, seed,
            pr=1.0, lrf_jitter_deg=kw["lrf_jitter_deg"], scores=config.score_model(),
            eps_pr=config.epsilon_pr)
        return cset, gt, config.epsilon_pr * 1.0

    model = bumpy_cloud(config.cloud_points, seed)
    pr = model.resolution
    eps_pr = config.epsilon_pr
    match_kw = dict(nms_radius_pr=config.nms_radius_pr, support_radius_pr=config.support_radius_pr,
                    descriptor=config.descriptor, target_keypoints=config.target_keypoints,
                    gt=gt, oracle_corrupt=config.oracle_corrupt, seed=seed)
    source = model
    target = model.transformed(gt)
    if nz == "noise":
        target = add_gaussian_noise(target, level, seed + 1)
    elif nz == "density":
        target = downsample_random(target, level, seed + 1)
    elif nz == "overlap":
        pair = make_partial_pair(model, level, gt, seed + 1, eps_pr=eps_pr)
        source, target = pair.source, pair.target
    elif nz == "epsilon":
        eps_pr = level
    elif nz == "nms_radius":
        match_kw["nms_radius_pr"] = level
    elif nz in ("clutter", "occlusion"):
        keep = 1.0 - level if nz == "occlusion" else 1.0
        part, counts = compose_scene([model], [gt], [keep], 0, seed + 1)
        floor = 0
        if nz == "clutter":
            if not 0 <= level < 1:
                raise ValueError("clutter level must lie in [0, 1)")
            floor = int(round(counts[0][0] * level / (1.0 - level)))
        target, counts = compose_scene([model], [gt], [keep], floor, seed + 1, floor_size=2.5)
        clutter_occlusion_metrics(target, *counts[0])  # validates the bookkeeping
    elif nz == "descriptor_corruption":
        match_kw.update(descriptor="oracle", oracle_corrupt=level)
    if config.noise_pr > 0 and nz != "noise":
        target = add_gaussian_noise(target, config.noise_pr, seed + 2)
    cset = extract_and_match(source, target, **match_kw)
    return cset, gt, eps_pr * pr


def make_pair(config: BenchConfig, level: float, seed: int) -> SyntheticPair:
    """The cell's data as a SyntheticPair (what ``gen`` writes to disk)."""
    cset, gt, eps = build_case(config, level, seed)
    labels = label_ground_truth(cset, gt, eps)
    meta = {"nuisance": config.nuisance, "level": level, "seed": seed, "pr": cset.meta.get("pr", 1.0),
            "eps": eps}
    return SyntheticPair(cset.source_cloud, cset.target_cloud, gt, labels, meta, cset)


def _time_method(method, cset, params, ctx, warmup, runs):
    for _ in range(warmup):
        run_method(method, cset, params, ctx)
    results = [run_method(method, cset, params, ctx) for _ in range(runs)]
    return results[0], statistics.median(r.elapsed for r in results)


def load_case(config: BenchConfig):
    """(cset, gt, eps, nuisance, level, seed) for the stored pair in ``config.pair_dir``."""
    from .io import load_pair

    pair = load_pair(config.pair_dir)
    cset = pair.correspondences
    if cset is None:
        cset = extract_and_match(pair.source, pair.target, nms_radius_pr=config.nms_radius_pr,
                                 support_radius_pr=config.support_radius_pr,
                                 descriptor=config.descriptor, gt=pair.gt,
                                 oracle_corrupt=config.oracle_corrupt, seed=config.rng_seed)
    pr = float(pair.meta.get("pr", cset.meta.get("pr", pair.source.resolution)))
    cset.meta["pr"] = pr
    meta = pair.meta
    return (cset, pair.gt, config.epsilon_pr * pr, str(meta.get("nuisance", "none")),
            float(meta.get("level", 0.0)), int(meta.get("seed", 0)))


def evaluate_case(config: BenchConfig, level: float, rep: int) -> list[PairResult]:
    """Every configured method on one (level, repetition) cell."""
    seed = _case_seed(config, rep)
    nuisance = config.nuisance
    if config.pair_dir:
        # a broken input file is the caller's error, not a method failure
        cset, gt, eps, nuisance, level, seed = load_case(config)
        return evaluate_set(config, cset, gt, eps, nuisance, level, seed)
    try:
        cset, gt, eps = build_case(config, level, seed)
    except ValueError as exc:
        return [PairResult(m, nuisance, level, seed, 0, 0, 0.0, 0.0, 0.0, False, 0.0,
                           f"pair generation failed: {exc}") for m in config.methods]
    return evaluate_set(config, cset, gt, eps, nuisance, level, seed)


def evaluate_set(config: BenchConfig, cset, gt, eps, nuisance, level, seed) -> list[PairResult]:
    params = config.grouper_params()
    labels = label_ground_truth(cset, gt, eps)
    ctx = GroupingContext.for_set(cset)
    rows = []
    for m in config.methods:
        base = dict(method=m, nuisance=nuisance, level=level, seed=seed,
                    n_corr=len(cset), n_inliers=int(labels.sum()))
        try:
            res, elapsed = _time_method(m, cset, params, ctx, config.warmup, config.timing_runs)
        except Exception as exc:  # a failing method must not abort the sweep
            rows.append(PairResult(**base, precision=0.0, recall=0.0, fscore=0.0, reg_success=False,
                                   elapsed=0.0, error=f"{type(exc).__name__}: {exc}"))
            continue
        p, r, f = score(res.selected, labels)
        rows.append(PairResult(**base, precision=p, recall=r, fscore=f,
                               reg_success=registration_success(p, config.tau_reg), elapsed=elapsed))
    return rows


def _evaluate_star(args):
    cfg, level, rep = args
    return evaluate_case(BenchConfig.from_dict(cfg), level, rep)


def run_benchmark(config: BenchConfig, write: bool = True) -> Report:
    if config.pair_dir:
        cells = [(0.0, 0)]
    else:
        cells = [(level, rep) for level in config.levels for rep in range(config.repetitions)]
    if config.jobs > 1 and len(cells) > 1:
        cfg = config.to_dict()
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_evaluate_star, [(cfg, lv, rep) for lv, rep in cells]))
    else:
        chunks = [evaluate_case(config, lv, rep) for lv, rep in cells]
    report = Report(config, [row for chunk in chunks for row in chunk])
    if write:
        report.write()
    return report


# ---------------------------------------------------------------------------
# aggregation and output


def aggregate(rows) -> list[dict]:
    """Mean P/R/F, success rate and median time per (nuisance, method, level)."""
    groups: dict[tuple, list[PairResult]] = {}
    for r in rows:
        groups.setdefault((r.nuisance, r.method, r.level), []).append(r)
    out = []
    for (nz, m, lv), rs in groups.items():
        out.append({
            "nuisance": nz, "method": m, "level": lv, "runs": len(rs),
            "precision": float(np.mean([r.precision for r in rs])),
            "recall": float(np.mean([r.recall for r in rs])),
            "fscore": float(np.mean([r.fscore for r in rs])),
            "success_rate": float(np.mean([r.reg_success for r in rs])),
            "elapsed_s": float(np.median([r.elapsed for r in rs])),
            "failures": sum(1 for r in rs if r.error),
        })
    return out


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_csv(path_or_text) -> list[PairResult]:
    """Parse a report CSV back into PairResults (error notes are not stored)."""
    text = path_or_text
    if not isinstance(text, str) or "\n" not in text:
        text = Path(path_or_text).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for rec in reader:
        rows.append(PairResult(
            method=rec["method"], nuisance=rec["nuisance"], level=float(rec["level"]),
            seed=int(rec["seed"]), n_corr=int(rec["n_corr"]), n_inliers=int(rec["n_inliers"]),
            precision=float(rec["precision"]), recall=float(rec["recall"]), fscore=float(rec["fscore"]),
            reg_success=rec["reg_success"] in ("1", "true", "True"), elapsed=float(rec["elapsed_s"])))
    return rows


def markdown_summary(rows) -> str:
    summary = aggregate(rows)
    lines = []
    for nz in dict.fromkeys(s["nuisance"] for s in summary):
        lines += [f"## {nz}", "",
                  "| method | level | runs | precision | recall | fscore | success | elapsed_s | failures |",
                  "|---|---|---|---|---|---|---|---|---|"]
        for s in summary:
            if s["nuisance"] != nz:
                continue
            lines.append(f"| {s['method']} | {s['level']:g} | {s['runs']} | {s['precision']:.4f} | "
                         f"{s['recall']:.4f} | {s['fscore']:.4f} | {s['success_rate']:.4f} | "
                         f"{s['elapsed_s']:.4g} | {s['failures']} |")
        lines.append("")
    return "\n".join(lines)


def timed(fn, *args, warmup: int = 1, runs: int = 3, **kw) -> float:
    """Median wall-clock seconds of ``fn(*args, **kw)`` after warmup calls."""
    for _ in range(warmup):
        fn(*args, **kw)
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(*args, **kw)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


__all__ = [
    "CSV_COLUMNS", "NUISANCES", "BenchConfig", "PairResult", "Report", "label_ground_truth",
    "score", "registration_success", "transform_error", "build_case", "make_pair",
    "evaluate_case", "run_benchmark", "aggregate", "rows_to_csv", "read_csv", "markdown_summary",
    "timed",
]
