"""Shared pieces for the groupers: parameters, results, Otsu, rigidity terms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.spatial.distance import cdist

from ..features import Correspondence, CorrespondenceSet
from ..geometry import PointCloud, RigidTransform

METHODS = ("ss", "nnsr", "st", "ransac", "gc", "3dhv", "gtm", "si", "cv")

ADAPTIVE = "adaptive"

# distances below this count as a duplicate keypoint
_DUP_EPS = 1e-12


@dataclass
class GrouperParams:
    """Grouper settings. Length-valued fields are in multiples of pr."""

    t_ss: str | float = ADAPTIVE
    t_nnsr: float = 0.8
    N_ransac: int = 10000
    d_ransac: float = 5.0
    t_st: float = 0.6
    t_gc: float = 3.0
    N_gtm: int = 100
    t_gtm: str | float = ADAPTIVE
    kappa: int = 250
    varsigma: float = 0.9
    delta: float = 5.0
    k_cv: int = 200
    t_cv: str | float = ADAPTIVE
    delta_r: float = 2.0
    delta_L: float = 10.0
    si_ratio_init: float = 0.8
    hough_bin: float = 4.0
    hough_neighbors: bool = False
    gtm_jitter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("N_ransac", "N_gtm", "kappa", "k_cv"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
            setattr(self, name, int(getattr(self, name)))
        for name in ("d_ransac", "t_gc", "delta", "delta_r", "delta_L", "hough_bin"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("t_nnsr", "t_st", "varsigma", "si_ratio_init"):
            if not 0.0 <= float(getattr(self, name)) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("t_ss", "t_gtm", "t_cv"):
            v = getattr(self, name)
            if v != ADAPTIVE and not isinstance(v, (int, float)):
                raise ValueError(f"{name} must be 'adaptive' or a number")
        if self.gtm_jitter < 0:
            raise ValueError("gtm_jitter must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> GrouperParams:
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown grouper parameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroupingContext:
    pr: float = 1.0
    source_cloud: PointCloud | None = None
    target_cloud: PointCloud | None = None

    def __post_init__(self):
        if not self.pr > 0:
            raise ValueError("pr must be positive")

    @classmethod
    def for_set(cls, cset: CorrespondenceSet, pr: float | None = None) -> GroupingContext:
        if pr is None:
            pr = cset.meta.get("pr")
        if pr is None:
            pr = cset.source_cloud.resolution if cset.source_cloud is not None else 1.0
        return cls(pr, cset.source_cloud, cset.target_cloud)


@dataclass
class GroupingResult:
    method: str
    selected: np.ndarray
    scores: np.ndarray
    elapsed: float = 0.0
    transform: RigidTransform | None = field(default=None, repr=False)

    def __post_init__(self):
        self.selected = np.unique(np.asarray(self.selected, dtype=int))
        self.scores = np.asarray(self.scores, dtype=float)

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "selected": [int(i) for i in self.selected],
            "scores": [float(s) for s in self.scores],
            "elapsed_s": float(self.elapsed),
        }


def otsu_threshold(values, bins: int = 256) -> float:
    """Bin-edge threshold maximizing between-class variance.

    The histogram spans [min, max]; class variance uses bin centres. Ties go
    to the lowest edge. Callers select values strictly greater than the
    returned edge.
    """
    v = np.asarray(values, dtype=float).ravel()
    if len(v) < 2:
        raise ValueError("need at least 2 values")
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise ValueError("degenerate distribution")
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    total = hist.sum()
    w = np.cumsum(hist)[:-1].astype(float)
    m = np.cumsum(hist * centers)[:-1]
    mtot = float(np.sum(hist * centers))
    valid = (w > 0) & (w < total)
    sb = np.full(bins - 1, -np.inf)
    w0 = w[valid] / total
    mu0 = m[valid] / w[valid]
    mu1 = (mtot - m[valid]) / (total - w[valid])
    sb[valid] = w0 * (1.0 - w0) * (mu0 - mu1) ** 2
    # lowest edge among maxima equal up to rounding (empty bins make flat runs)
    k = int(np.flatnonzero(sb >= sb.max() * (1.0 - 1e-12))[0]) + 1
    return float(edges[k])


def select_above(scores: np.ndarray, threshold: str | float = ADAPTIVE) -> np.ndarray:
    """Indices with score > threshold; Otsu when adaptive, empty if degenerate."""
    if threshold == ADAPTIVE:
        try:
            threshold = otsu_threshold(scores)
        except ValueError:
            return np.zeros(0, dtype=int)
    return np.flatnonzero(scores > threshold)


def _ratio(d: np.ndarray, dp: np.ndarray) -> np.ndarray:
    lo = np.minimum(d, dp)
    hi = np.maximum(d, dp)
    out = np.zeros(np.broadcast(d, dp).shape)
    ok = (d >= _DUP_EPS) & (dp >= _DUP_EPS)
    np.divide(lo, hi, out=out, where=ok)
    return out


def rigidity_ratio(ci: Correspondence, cj: Correspondence) -> float:
    d = np.linalg.norm(np.asarray(ci.source.position) - cj.source.position)
    dp = np.linalg.norm(np.asarray(ci.target.position) - cj.target.position)
    return float(_ratio(np.float64(d), np.float64(dp)))


def rigidity_diff(ci: Correspondence, cj: Correspondence) -> float:
    d = np.linalg.norm(np.asarray(ci.source.position) - cj.source.position)
    dp = np.linalg.norm(np.asarray(ci.target.position) - cj.target.position)
    return float(abs(d - dp))


def pairwise_distances(cset: CorrespondenceSet, rows=None, cols=None):
    """Source and target inter-keypoint distance matrices (rows x cols)."""
    r = slice(None) if rows is None else rows
    c = slice(None) if cols is None else cols
    return cdist(cset.src[r], cset.src[c]), cdist(cset.dst[r], cset.dst[c])


def rigidity_ratio_matrix(cset: CorrespondenceSet, rows=None, cols=None) -> np.ndarray:
    d, dp = pairwise_distances(cset, rows, cols)
    return _ratio(d, dp)


def rigidity_diff_matrix(cset: CorrespondenceSet, rows=None, cols=None) -> np.ndarray:
    d, dp = pairwise_distances(cset, rows, cols)
    return np.abs(d - dp)


def require_lrfs(cset: CorrespondenceSet):
    if not cset.has_lrfs:
        raise ValueError("context incomplete")
