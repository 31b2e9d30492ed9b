"""Keypoints, descriptors and L2 feature matching into a correspondence set."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LRF, NeighborIndex, PointCloud, RigidTransform, compute_lrf

HIST_BINS = 8


@dataclass(frozen=True)
class Keypoint:
    position: np.ndarray
    cloud_index: int
    saliency: float = 0.0
    lrf: LRF | None = None


@dataclass(frozen=True)
class Correspondence:
    source: Keypoint
    target: Keypoint
    similarity: float
    ratio_score: float


@dataclass(eq=False)
class CorrespondenceSet:
    """Array-backed correspondence set.

    Row i pairs source keypoint ``src[i]`` (cloud index ``src_idx[i]``) with
    target keypoint ``dst[i]``. ``src_lrf`` / ``dst_lrf`` hold per-row LRF axes
    (rows = x, y, z) and may be None when no frames were computed.
    """

    src: np.ndarray
    dst: np.ndarray
    sim: np.ndarray
    ratio: np.ndarray
    src_idx: np.ndarray | None = None
    dst_idx: np.ndarray | None = None
    src_lrf: np.ndarray | None = None
    dst_lrf: np.ndarray | None = None
    source_cloud: PointCloud | None = None
    target_cloud: PointCloud | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=float).reshape(-1, 3)
        self.dst = np.asarray(self.dst, dtype=float).reshape(-1, 3)
        n = len(self.src)
        if len(self.dst) != n:
            raise ValueError("source/target keypoint counts differ")
        self.sim = np.asarray(self.sim, dtype=float).reshape(n)
        self.ratio = np.asarray(self.ratio, dtype=float).reshape(n)
        for name in ("sim", "ratio"):
            v = getattr(self, name)
            if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
                raise ValueError(f"{name} scores must lie in [0, 1]")
        self.src_idx = np.arange(n) if self.src_idx is None else np.asarray(self.src_idx, dtype=int).reshape(n)
        self.dst_idx = np.arange(n) if self.dst_idx is None else np.asarray(self.dst_idx, dtype=int).reshape(n)
        for name in ("src_lrf", "dst_lrf"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float).reshape(n, 3, 3))
        for idx, cloud in ((self.src_idx, self.source_cloud), (self.dst_idx, self.target_cloud)):
            if cloud is not None and n and (idx.min() < 0 or idx.max() >= len(cloud)):
                raise ValueError("keypoint index out of range for its cloud")

    def __len__(self):
        return len(self.src)

    def __getitem__(self, i: int) -> Correspondence:
        def kp(pos, idx, lrfs):
            frame = None if lrfs is None else LRF(pos, lrfs[i])
            return Keypoint(pos, int(idx), 0.0, frame)

        return Correspondence(
            kp(self.src[i], self.src_idx[i], self.src_lrf),
            kp(self.dst[i], self.dst_idx[i], self.dst_lrf),
            float(self.sim[i]),
            float(self.ratio[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def has_lrfs(self) -> bool:
        return self.src_lrf is not None and self.dst_lrf is not None

    @classmethod
    def from_items(cls, items, source_cloud=None, target_cloud=None) -> CorrespondenceSet:
        items = list(items)
        with_lrf = bool(items) and all(c.source.lrf is not None and c.target.lrf is not None for c in items)
        return cls(
            src=[c.source.position for c in items],
            dst=[c.target.position for c in items],
            sim=[c.similarity for c in items],
            ratio=[c.ratio_score for c in items],
            src_idx=[c.source.cloud_index for c in items],
            dst_idx=[c.target.cloud_index for c in items],
            src_lrf=[c.source.lrf.axes for c in items] if with_lrf else None,
            dst_lrf=[c.target.lrf.axes for c in items] if with_lrf else None,
            source_cloud=source_cloud,
            target_cloud=target_cloud,
        )

    def subset(self, idx) -> CorrespondenceSet:
        idx = np.asarray(idx, dtype=int)
        return CorrespondenceSet(
            self.src[idx], self.dst[idx], self.sim[idx], self.ratio[idx],
            self.src_idx[idx], self.dst_idx[idx],
            None if self.src_lrf is None else self.src_lrf[idx],
            None if self.dst_lrf is None else self.dst_lrf[idx],
            self.source_cloud, self.target_cloud, dict(self.meta),
        )

    def transformed(self, T: RigidTransform) -> CorrespondenceSet:
        """Apply one rigid motion to both sides (clouds, keypoints and LRFs)."""
        R = T.rotation
        return CorrespondenceSet(
            T.apply(self.src), T.apply(self.dst), self.sim, self.ratio,
            self.src_idx, self.dst_idx,
            None if self.src_lrf is None else self.src_lrf @ R.T,
            None if self.dst_lrf is None else self.dst_lrf @ R.T,
            None if self.source_cloud is None else self.source_cloud.transformed(T),
            None if self.target_cloud is None else self.target_cloud.transformed(T),
            dict(self.meta),
        )


def _local_covariances(points: np.ndarray, neighborhoods) -> np.ndarray:
    covs = np.zeros((len(neighborhoods), 3, 3))
    for k, nb in enumerate(neighborhoods):
        q = points[nb]
        d = q - q.mean(axis=0)
        covs[k] = d.T @ d / len(nb)
    return covs


def detect_keypoints(cloud: PointCloud, index: NeighborIndex | None, nms_radius: float,
                     support_radius: float, min_support: int = 3) -> list[Keypoint]:
    """ISS-style detector: saliency is the smallest covariance eigenvalue.

    Points with fewer than ``min_support`` points in their support are skipped.
    A point survives non-maximum suppression iff no other eligible point within
    ``nms_radius`` beats it on (saliency, lower index).
    """
    if len(cloud) == 0:
        raise ValueError("empty cloud")
    if nms_radius <= 0 or support_radius <= 0:
        raise ValueError("radii must be positive")
    index = cloud.index if index is None else index
    pts = cloud.points
    tree = index.tree
    support = tree.query_ball_point(pts, support_radius)
    eligible = np.array([len(nb) >= min_support for nb in support])
    cand = np.flatnonzero(eligible)
    if len(cand) == 0:
        return []
    sal = np.full(len(pts), -np.inf)
    covs = _local_covariances(pts, [support[i] for i in cand])
    sal[cand] = np.linalg.eigvalsh(covs)[:, 0]

    kept = []
    near = tree.query_ball_point(pts[cand], nms_radius)
    for i, nb in zip(cand, near):
        s = sal[i]
        if all(j == i or not eligible[j] or s > sal[j] or (s == sal[j] and i < j) for j in nb):
            kept.append(int(i))
    kept.sort(key=lambda i: (-sal[i], i))
    return [Keypoint(pts[i].copy(), i, float(sal[i])) for i in kept]


def attach_lrfs(cloud: PointCloud, index: NeighborIndex | None, keypoints, radius: float) -> list[Keypoint]:
    """Return keypoints with LRFs; keypoints lacking support are dropped."""
    index = cloud.index if index is None else index
    out = []
    for kp in keypoints:
        try:
            frame = compute_lrf(cloud, index, kp.position, radius)
        except ValueError:
            continue
        out.append(Keypoint(kp.position, kp.cloud_index, kp.saliency, frame))
    return out


def describe(cloud: PointCloud, index: NeighborIndex | None, kp: Keypoint, support_radius: float) -> np.ndarray:
    """16-d rotation-invariant reference descriptor.

    Two normalized 8-bin histograms: neighbor distance / support_radius, and
    |cos| between neighbor displacement and the LRF z-axis.
    """
    index = cloud.index if index is None else index
    frame = kp.lrf or compute_lrf(cloud, index, kp.position, support_radius)
    idx = index.radius(kp.position, support_radius)
    disp = cloud.points[idx] - kp.position
    dist = np.linalg.norm(disp, axis=1)
    keep = dist > 1e-12
    disp, dist = disp[keep], dist[keep]
    if len(dist) == 0:
        raise ValueError("empty support")
    h_dist, _ = np.histogram(np.minimum(dist / support_radius, 1.0), bins=HIST_BINS, range=(0.0, 1.0))
    cosz = np.abs(disp @ frame.axes[2]) / dist
    h_ang, _ = np.histogram(np.minimum(cosz, 1.0), bins=HIST_BINS, range=(0.0, 1.0))
    return np.concatenate([h_dist / h_dist.sum(), h_ang / h_ang.sum()])


def _zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def oracle_describe(kp: Keypoint, gt: RigidTransform, corrupt_prob: float, noise_sigma: float,
                    dim: int, seed: int, lattice: float = 1.0, salt: int = 0) -> np.ndarray:
    """Synthetic descriptor keyed by the gt-mapped keypoint position.

    Source keypoints pass the ground-truth pose, target keypoints the identity;
    both then land in the same lattice cell and draw the same unit vector.
    With probability ``corrupt_prob`` the cell key is swapped for a random one;
    give source and target different ``salt`` values so their corruption draws
    are independent.
    """
    if dim < 3:
        raise ValueError("dim must be >= 3")
    cell = np.floor(gt.apply(kp.position) / lattice).astype(np.int64)
    key = [_zigzag(int(c)) for c in cell]
    decide = np.random.default_rng([seed, salt, kp.cloud_index, 1, *key])
    if decide.random() < corrupt_prob:
        key = [int(v) for v in decide.integers(0, 2**62, size=3)] + [1]
    base = np.random.default_rng([seed, *key]).normal(size=dim)
    if noise_sigma > 0:
        base = base / np.linalg.norm(base)
        base = base + noise_sigma * np.random.default_rng([seed, salt, kp.cloud_index, 2, *key]).normal(size=dim)
    return base / np.linalg.norm(base)


def _unit(f: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(f, axis=-1, keepdims=True)
    return np.divide(f, n, out=np.zeros_like(f), where=n > 0)


def match_features(source_feats, target_feats, source_kps, target_kps, *, mutual: bool = False,
                   source_cloud: PointCloud | None = None,
                   target_cloud: PointCloud | None = None) -> CorrespondenceSet:
    """Nearest-neighbour L2 matching, one correspondence per source keypoint.

    similarity = 1 - |f_unit - f'_unit| / 2; ratio = 1 - d_nn1 / d_nn2
    (0 when d_nn2 == 0). ``mutual`` keeps only mutual nearest neighbours.
    """
    F = np.asarray(source_feats, dtype=float)
    G = np.asarray(target_feats, dtype=float)
    if F.ndim != 2 or G.ndim != 2 or len(F) == 0:
        raise ValueError("feature lists must be non-empty 2-D arrays")
    if F.shape[1] != G.shape[1]:
        raise ValueError("feature dimensions differ")
    if len(G) < 2:
        raise ValueError("need at least 2 target features")
    if len(F) != len(source_kps) or len(G) != len(target_kps):
        raise ValueError("features and keypoints differ in length")
    d, nn = cKDTree(G).query(F, k=2)
    d1, d2 = d[:, 0], d[:, 1]
    j = nn[:, 0]
    ratio = np.zeros(len(F))
    ok = d2 > 0
    ratio[ok] = 1.0 - d1[ok] / d2[ok]
    ratio = np.clip(ratio, 0.0, 1.0)
    sim = np.clip(1.0 - np.linalg.norm(_unit(F) - _unit(G[j]), axis=1) / 2.0, 0.0, 1.0)

    rows = np.arange(len(F))
    if mutual:
        _, back = cKDTree(F).query(G[j], k=1)
        rows = rows[back == rows]
    src_lrf = dst_lrf = None
    if all(k.lrf is not None for k in source_kps) and all(k.lrf is not None for k in target_kps):
        src_lrf = np.array([source_kps[i].lrf.axes for i in rows])
        dst_lrf = np.array([target_kps[j[i]].lrf.axes for i in rows])
    return CorrespondenceSet(
        src=np.array([source_kps[i].position for i in rows]).reshape(-1, 3),
        dst=np.array([target_kps[j[i]].position for i in rows]).reshape(-1, 3),
        sim=sim[rows],
        ratio=ratio[rows],
        src_idx=[source_kps[i].cloud_index for i in rows],
        dst_idx=[target_kps[j[i]].cloud_index for i in rows],
        src_lrf=src_lrf,
        dst_lrf=dst_lrf,
        source_cloud=source_cloud,
        target_cloud=target_cloud,
    )


def _repeatable_keypoints(source_kps, target: PointCloud, gt: RigidTransform) -> list[Keypoint]:
    # the target point nearest to each gt-mapped source keypoint, deduplicated
    _, nn = target.index.knn(gt.apply(np.array([k.position for k in source_kps])), 1)
    seen, out = set(), []
    for j in nn[:, 0]:
        if int(j) not in seen:
            seen.add(int(j))
            out.append(Keypoint(target.points[j].copy(), int(j)))
    return out


def extract_and_match(source: PointCloud, target: PointCloud, *, nms_radius_pr: float = 3.0,
                      support_radius_pr: float = 15.0, detector_radius_pr: float = 5.0,
                      descriptor: str = "reference", target_keypoints: str = "detect",
                      gt: RigidTransform | None = None, oracle_corrupt: float = 0.0,
                      oracle_noise: float = 0.0, oracle_dim: int = 32, seed: int = 0,
                      mutual: bool = False) -> CorrespondenceSet:
    """Detect, frame, describe and match keypoints of a cloud pair.

    Radii are in units of the source resolution. ``target_keypoints="repeatable"``
    skips target detection and takes the target points nearest to the gt-mapped
    source keypoints. The oracle descriptor needs ``gt``.
    """
    pr = source.resolution
    kps_s = detect_keypoints(source, None, nms_radius_pr * pr, detector_radius_pr * pr)
    if target_keypoints == "detect":
        kps_t = detect_keypoints(target, None, nms_radius_pr * pr, detector_radius_pr * pr)
    elif target_keypoints == "repeatable":
        if gt is None:
            raise ValueError("repeatable keypoints need the ground-truth pose")
        kps_t = _repeatable_keypoints(kps_s, target, gt)
    else:
        raise ValueError(f"unknown target_keypoints mode {target_keypoints!r}")
    radius = support_radius_pr * pr
    kps_s = attach_lrfs(source, None, kps_s, radius)
    kps_t = attach_lrfs(target, None, kps_t, radius)
    if not kps_s or len(kps_t) < 2:
        raise ValueError("too few keypoints to match")
    if descriptor == "reference":
        fs = [describe(source, None, k, radius) for k in kps_s]
        ft = [describe(target, None, k, radius) for k in kps_t]
    elif descriptor == "oracle":
        if gt is None:
            raise ValueError("oracle descriptor needs the ground-truth pose")
        ident = RigidTransform.identity()
        lattice = 2.0 * pr
        fs = [oracle_describe(k, gt, oracle_corrupt, oracle_noise, oracle_dim, seed, lattice, 0) for k in kps_s]
        ft = [oracle_describe(k, ident, oracle_corrupt, oracle_noise, oracle_dim, seed, lattice, 1) for k in kps_t]
    else:
        raise ValueError(f"unknown descriptor {descriptor!r}")
    cset = match_features(fs, ft, kps_s, kps_t, mutual=mutual, source_cloud=source, target_cloud=target)
    cset.meta["pr"] = pr
    return cset
