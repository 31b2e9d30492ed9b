"""Nuisance generators and synthetic correspondence sets with ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .features import CorrespondenceSet
from .geometry import PointCloud, RigidTransform, axis_angle_rotation, random_rotation


@dataclass
class SyntheticPair:
    source: PointCloud
    target: PointCloud
    gt: RigidTransform
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    correspondences: CorrespondenceSet | None = None


@dataclass(frozen=True)
class ScoreModel:
    """Normal (mean, sd) score distributions, clipped to [0, 1]."""

    sim_inlier: tuple[float, float] = (0.6, 0.15)
    sim_outlier: tuple[float, float] = (0.5, 0.15)
    ratio_inlier: tuple[float, float] = (0.5, 0.2)
    ratio_outlier: tuple[float, float] = (0.4, 0.2)


# ---------------------------------------------------------------------------
# shapes


def sphere_cloud(n: int, radius: float = 1.0) -> PointCloud:
    """Near-uniform points on a sphere (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5 ** 0.5) * k
    pts = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    return PointCloud(radius * pts, pts)


def bumpy_cloud(n: int, seed: int, n_bumps: int = 12, radius: float = 1.0) -> PointCloud:
    """Asymmetric closed surface: a sphere with random Gaussian bumps and dents."""
    rng = np.random.default_rng(seed)
    base = sphere_cloud(n).points
    centers = rng.normal(size=(n_bumps, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amp = rng.uniform(-0.25, 0.35, n_bumps)
    width = rng.uniform(0.25, 0.6, n_bumps)
    d2 = ((base[:, None, :] - centers[None]) ** 2).sum(axis=2)
    r = 1.0 + (amp * np.exp(-d2 / width ** 2)).sum(axis=1)
    return PointCloud(radius * base * r[:, None])


# ---------------------------------------------------------------------------
# nuisances


def add_gaussian_noise(cloud: PointCloud, sigma_pr: float, seed: int) -> PointCloud:
    """Per-axis Gaussian jitter with standard deviation sigma_pr * pr."""
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    if sigma_pr < 0:
        raise ValueError("sigma_pr must be >= 0")
    pr = cloud.resolution
    meta = dict(cloud.meta, noise_sigma_pr=sigma_pr, source_resolution=pr)
    if sigma_pr == 0:
        return PointCloud(cloud.points, cloud.normals, meta)
    rng = np.random.default_rng(seed)
    pts = cloud.points + rng.normal(scale=sigma_pr * pr, size=cloud.points.shape)
    return PointCloud(pts, cloud.normals, meta)


def downsample_random(cloud: PointCloud, keep_ratio: float, seed: int) -> PointCloud:
    """Uniform random subset of ceil(keep_ratio * n) points, original order kept."""
    if not 0 < keep_ratio <= 1:
        raise ValueError("keep_ratio must lie in (0, 1]")
    n = len(cloud)
    m = math.ceil(keep_ratio * n - 1e-9)
    if m < 2:
        raise ValueError("downsampled cloud would have fewer than 2 points")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False)) if m < n else np.arange(n)
    out = cloud.subset(idx)
    out.meta.update(keep_ratio=keep_ratio, source_indices=idx)
    return out


def compute_overlap(a: PointCloud, b: PointCloud, gt: RigidTransform, eps: float) -> float:
    """Share of gt-mapped points of ``a`` with a neighbour in ``b`` within eps,
    over min(|a|, |b|)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("clouds must be non-empty")
    d, _ = cKDTree(b.points).query(gt.apply(a.points), k=1, distance_upper_bound=eps * (1 + 1e-12))
    hits = int(np.count_nonzero(d <= eps))
    return min(1.0, hits / min(len(a), len(b)))


def make_partial_pair(cloud: PointCloud, target_overlap: float, T: RigidTransform, seed: int,
                      eps_pr: float = 5.0, tol: float = 0.05) -> SyntheticPair:
    """Cut two half-space views of ``cloud`` and move the second one by T.

    The views are {u.p <= m + w/2} and {u.p >= m - w/2} for a random direction
    u; w is bisected until the measured overlap is within ``tol`` of the
    target. Negative w opens a gap between the views.
    """
    if len(cloud) < 100:
        raise ValueError("need at least 100 points")
    if not 0 < target_overlap <= 1:
        raise ValueError("target_overlap must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    proj = cloud.points @ u
    m = float(np.median(proj))
    eps = eps_pr * cloud.resolution
    span = float(proj.max() - proj.min())
    q10, q90 = np.quantile(proj, [0.1, 0.9])
    w_lo = max(2 * (q10 - m), 2 * (m - q90))
    w_hi = 2 * span + 1.0

    def views(w):
        return np.flatnonzero(proj <= m + w / 2), np.flatnonzero(proj >= m - w / 2)

    def overlap(w):
        i1, i2 = views(w)
        v1, v2 = cloud.subset(i1), cloud.subset(i2)
        return compute_overlap(v1, v2, RigidTransform.identity(), eps)

    lo_val, hi_val = overlap(w_lo), overlap(w_hi)
    if not lo_val - tol <= target_overlap <= hi_val + tol:
        raise ValueError("unreachable overlap")
    w, val = (w_hi, hi_val) if abs(hi_val - target_overlap) <= tol else (w_lo, lo_val)
    a, b = w_lo, w_hi
    for _ in range(100):
        if abs(val - target_overlap) <= tol:
            break
        w = (a + b) / 2
        val = overlap(w)
        if val < target_overlap:
            a = w
        else:
            b = w
    if abs(val - target_overlap) > tol:
        raise ValueError("unreachable overlap")
    i1, i2 = views(w)
    source = cloud.subset(i1)
    target = cloud.subset(i2).transformed(T)
    meta = {"nuisance": "overlap", "level": target_overlap, "seed": seed, "overlap": val}
    return SyntheticPair(source, target, T, None, meta)


def clutter_occlusion_metrics(scene: PointCloud | int, model_in_scene_count: int,
                              model_total_count: int) -> tuple[float, float]:
    """Clutter and occlusion with surface area approximated by point counts."""
    scene_count = scene if isinstance(scene, int) else len(scene)
    if scene_count <= 0 or model_total_count <= 0:
        raise ValueError("zero denominator")
    if model_in_scene_count < 0 or model_in_scene_count > min(scene_count, model_total_count):
        raise ValueError("model_in_scene_count out of range")
    return 1.0 - model_in_scene_count / scene_count, 1.0 - model_in_scene_count / model_total_count


def occlude(cloud: PointCloud, keep_fraction: float, seed: int) -> np.ndarray:
    """Indices kept by a random half-space cut retaining ``keep_fraction`` of the points."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    proj = cloud.points @ u
    k = max(1, int(round(keep_fraction * len(cloud))))
    return np.sort(np.argsort(proj, kind="stable")[:k])


def compose_scene(models: list[PointCloud], poses: list[RigidTransform], keep_fractions: list[float],
                  floor_points: int, seed: int, floor_size: float = 4.0):
    """Place partially occluded models over a flat floor.

    Returns (scene, counts) where counts[i] is (points of model i in the scene,
    total points of model i). Scene points are ordered model by model, floor last.
    """
    rng = np.random.default_rng(seed)
    parts, counts = [], []
    for k, (model, pose, keep) in enumerate(zip(models, poses, keep_fractions)):
        idx = occlude(model, keep, seed + 7919 * (k + 1))
        parts.append(pose.apply(model.points[idx]))
        counts.append((len(idx), len(model)))
    if floor_points:
        xy = rng.uniform(-floor_size / 2, floor_size / 2, size=(floor_points, 2))
        low = min(p[:, 2].min() for p in parts) if parts else 0.0
        parts.append(np.column_stack([xy, np.full(floor_points, low - 0.05)]))
    return PointCloud(np.vstack(parts)), counts


# ---------------------------------------------------------------------------
# synthetic correspondences


def _draw_scores(rng, mean_sd, size):
    return np.clip(rng.normal(mean_sd[0], mean_sd[1], size), 0.0, 1.0)


def synth_correspondences(n: int, inlier_ratio: float, gt: RigidTransform, pos_sigma_pr: float,
                          extent: float, seed: int, *, pr: float = 1.0, lrf_jitter_deg: float = 0.0,
                          scores: ScoreModel | None = None, eps_pr: float = 5.0):
    """Labelled correspondence set with exactly floor(n * inlier_ratio) inliers.

    Sources are uniform in a centred cube of side ``extent``. Inlier targets are
    gt-mapped sources plus per-axis noise of pos_sigma_pr * pr; outlier targets
    are independent gt-mapped uniform points. Both kinds are resampled until
    they fall on the right side of the eps_pr * pr inlier test, so labels are
    exact. Inlier LRFs agree with gt up to ``lrf_jitter_deg``; outlier LRFs
    are independent.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if not 0 <= inlier_ratio <= 1:
        raise ValueError("inlier_ratio must lie in [0, 1]")
    scores = scores or ScoreModel()
    rng = np.random.default_rng(seed)
    eps = eps_pr * pr
    n_in = int(math.floor(n * inlier_ratio + 1e-9))
    half = extent / 2.0

    src = rng.uniform(-half, half, size=(n, 3))
    dst = np.empty((n, 3))
    dst[:n_in] = gt.apply(src[:n_in])
    if pos_sigma_pr > 0:
        pending = np.arange(n_in)
        while len(pending):
            dst[pending] = gt.apply(src[pending]) + rng.normal(scale=pos_sigma_pr * pr, size=(len(pending), 3))
            res = np.linalg.norm(gt.apply(src[pending]) - dst[pending], axis=1)
            pending = pending[res > eps]
    pending = np.arange(n_in, n)
    while len(pending):
        dst[pending] = gt.apply(rng.uniform(-half, half, size=(len(pending), 3)))
        res = np.linalg.norm(gt.apply(src[pending]) - dst[pending], axis=1)
        pending = pending[res <= eps]

    labels = np.zeros(n, dtype=bool)
    labels[:n_in] = True
    sim = np.concatenate([_draw_scores(rng, scores.sim_inlier, n_in),
                          _draw_scores(rng, scores.sim_outlier, n - n_in)])
    ratio = np.concatenate([_draw_scores(rng, scores.ratio_inlier, n_in),
                            _draw_scores(rng, scores.ratio_outlier, n - n_in)])

    src_lrf = np.array([random_rotation(rng) for _ in range(n)])
    dst_lrf = np.array([random_rotation(rng) for _ in range(n)])
    dst_lrf[:n_in] = src_lrf[:n_in] @ gt.rotation.T
    if lrf_jitter_deg > 0:
        for i in range(n_in):
            J = axis_angle_rotation(rng.normal(size=3), np.radians(lrf_jitter_deg))
            dst_lrf[i] = dst_lrf[i] @ J.T

    perm = rng.permutation(n)
    src, dst, sim, ratio = src[perm], dst[perm], sim[perm], ratio[perm]
    src_lrf, dst_lrf, labels = src_lrf[perm], dst_lrf[perm], labels[perm]
    cset = CorrespondenceSet(
        src, dst, sim, ratio,
        src_lrf=src_lrf, dst_lrf=dst_lrf,
        source_cloud=PointCloud(src), target_cloud=PointCloud(dst),
        meta={"pr": pr, "inlier_ratio": inlier_ratio, "seed": seed},
    )
    return cset, labels
