"""Geometric primitives: point clouds, rigid transforms, LRFs, neighbor search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

_ORTHO_TOL = 1e-9


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinates")
    return arr


class NeighborIndex:
    """Exact k-NN / radius search over a fixed point array (kd-tree backed)."""

    def __init__(self, points):
        self.points = _as_points(points)
        self.tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def knn(self, query, k: int):
        """Return (distances, indices) of the k nearest points, nearest first.

        Rows are padded with ``inf`` / ``len(self)`` when fewer than k points exist.
        """
        q = np.asarray(query, dtype=float)
        flat = q.reshape(-1, 3)
        d, i = self.tree.query(flat, k=k)
        d = np.reshape(d, (len(flat), k))
        i = np.reshape(i, (len(flat), k))
        return (d[0], i[0]) if q.ndim == 1 else (d, i)

    def radius(self, center, r: float) -> np.ndarray:
        """Sorted indices of all points with distance <= r to ``center``."""
        idx = self.tree.query_ball_point(np.asarray(center, dtype=float), r)
        return np.array(sorted(idx), dtype=int)


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    _resolution: float | None = field(default=None, repr=False)
    _index: NeighborIndex | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = _as_points(self.points).copy()
        self.points.setflags(write=False)
        if self.normals is not None:
            normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(normals) != len(self.points):
                raise ValueError("normals and points differ in length")
            norms = np.linalg.norm(normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length")
            normals.setflags(write=False)
            self.normals = normals

    def __len__(self):
        return len(self.points)

    @property
    def resolution(self) -> float:
        if self._resolution is None:
            self._resolution = compute_resolution(self)
        return self._resolution

    @property
    def index(self) -> NeighborIndex:
        if self._index is None:
            self._index = NeighborIndex(self.points)
        return self._index

    def transformed(self, T: RigidTransform) -> PointCloud:
        normals = None if self.normals is None else self.normals @ T.rotation.T
        return PointCloud(T.apply(self.points), normals, dict(self.meta))

    def subset(self, idx) -> PointCloud:
        idx = np.asarray(idx, dtype=int)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals, dict(self.meta))


def compute_resolution(cloud: PointCloud) -> float:
    """Mean distance from each point to its nearest other point (pr)."""
    pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    if len(pts) < 2:
        raise ValueError("degenerate cloud")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(np.mean(d[:, 1]))


def is_rotation(R, tol: float = _ORTHO_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.all(np.abs(R.T @ R - np.eye(3)) <= tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not is_rotation(R):
            raise ValueError("rotation is not orthonormal with det +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> RigidTransform:
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 1.0) -> RigidTransform:
        return cls(random_rotation(rng), rng.uniform(-max_translation, max_translation, 3))

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points) -> np.ndarray:
        """R @ p + t for a single point (3,) or an (n, 3) array."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """self after other."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)


def apply(T: RigidTransform, p) -> np.ndarray:
    return T.apply(p)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    # uniform on SO(3) via a random unit quaternion
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return nearest_rotation(R)


def axis_angle_rotation(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * (K @ K)


def estimate_rigid_transform(src, dst=None) -> RigidTransform:
    """Least-squares rotation + translation taking ``src`` points onto ``dst``.

    Accepts either two (n, 3) arrays or a single sequence of (p, p') pairs.
    SVD of the cross-covariance with a determinant sign fix against reflections.
    Raises ``ValueError("degenerate sample")`` when the source points are
    coincident or collinear.
    """
    if dst is None:
        pairs = np.asarray(src, dtype=float).reshape(-1, 2, 3)
        src, dst = pairs[:, 0], pairs[:, 1]
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValueError("source and target counts differ")
    if len(src) < 3:
        raise ValueError("need at least 3 pairs")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    a = src - cs
    b = dst - cd
    # collinear sources leave the scatter matrix with rank < 2
    sv = np.linalg.svd(a.T @ a, compute_uv=False)
    if sv[0] <= 0.0 or sv[1] < 1e-9 * sv[0]:
        raise ValueError("degenerate sample")
    U, _, Vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cd - R @ cs)


@dataclass(frozen=True)
class LRF:
    """Local reference frame; rows of ``axes`` are the x, y, z unit vectors."""

    origin: np.ndarray
    axes: np.ndarray

    def __post_init__(self):
        axes = np.array(self.axes, dtype=float).reshape(3, 3)
        origin = np.array(self.origin, dtype=float).reshape(3)
        if not is_rotation(axes):
            raise ValueError("LRF axes must be right-handed orthonormal")
        axes.setflags(write=False)
        origin.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "origin", origin)


def _disambiguate(axis: np.ndarray, disp: np.ndarray, weights: np.ndarray) -> np.ndarray:
    dots = disp @ axis
    pos = np.count_nonzero(dots > 0)
    neg = np.count_nonzero(dots < 0)
    if pos != neg:
        return axis if pos > neg else -axis
    s = float(np.dot(weights, dots))
    if s != 0.0:
        return axis if s > 0 else -axis
    # fully symmetric support: make the dominant component positive
    return axis if axis[np.argmax(np.abs(axis))] > 0 else -axis


def compute_lrf(cloud: PointCloud, index: NeighborIndex | None, center, radius: float) -> LRF:
    """Covariance-based LRF at ``center`` from cloud points within ``radius``.

    Neighbors are weighted by (radius - d) / radius. Eigenvectors sorted by
    decreasing eigenvalue give x/y/z; x and z point toward the majority of
    neighbor displacements and y = z cross x.
    """
    if index is None:
        index = cloud.index
    center = np.asarray(center, dtype=float).reshape(3)
    idx = index.radius(center, radius)
    if len(idx) < 3:
        raise ValueError("insufficient support")
    disp = cloud.points[idx] - center
    dist = np.linalg.norm(disp, axis=1)
    w = (radius - dist) / radius
    wsum = w.sum()
    if wsum <= 0.0:
        raise ValueError("insufficient support")
    cov = (disp * w[:, None]).T @ disp / wsum
    _, vecs = np.linalg.eigh(cov)
    x = _disambiguate(vecs[:, 2], disp, w)
    z = _disambiguate(vecs[:, 0], disp, w)
    y = np.cross(z, x)
    axes = np.vstack([x, y, z])
    # clean up rounding so the frame passes the 1e-9 orthonormality check
    return LRF(center, nearest_rotation(axes))


def lrf_angle(a, b) -> float:
    """Rotation angle in degrees between two frames (trace formula, clamped)."""
    A = a.axes if isinstance(a, LRF) else np.asarray(a, dtype=float)
    B = b.axes if isinstance(b, LRF) else np.asarray(b, dtype=float)
    c = (np.trace(A @ B.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def pairwise_lrf_angles(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Angles (deg) between every frame in A (n,3,3) and every frame in B (m,3,3)."""
    tr = np.einsum("nij,mij->nm", A, B)
    return np.degrees(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))
