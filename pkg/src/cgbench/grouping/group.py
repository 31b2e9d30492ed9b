"""Group-based groupers: find the mutually consistent cluster in one shot."""
from __future__ import annotations

import numpy as np

from ..features import CorrespondenceSet
from ..geometry import RigidTransform
from .common import (
    GrouperParams,
    GroupingContext,
    GroupingResult,
    require_lrfs,
    rigidity_diff_matrix,
    rigidity_ratio_matrix,
    select_above,
)

_RANSAC_CHUNK = 512


def sample_triples(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """``count`` ordered triples of distinct indices, uniform over all such triples."""
    a = rng.integers(0, n, count)
    b = rng.integers(0, n - 1, count)
    c = rng.integers(0, n - 2, count)
    b = b + (b >= a)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    c = c + (c >= lo)
    c = c + (c >= hi)
    return np.stack([a, b, c], axis=1)


def batch_rigid_transforms(P: np.ndarray, Q: np.ndarray):
    """Vectorized least-squares fits for stacks of point sets (m, k, 3).

    Returns (R, t, ok) where ``ok`` flags non-degenerate source sets (same
    collinearity rule as ``estimate_rigid_transform``).
    """
    cp = P.mean(axis=1)
    cq = Q.mean(axis=1)
    A = P - cp[:, None, :]
    B = Q - cq[:, None, :]
    sv = np.linalg.svd(np.einsum("mki,mkj->mij", A, A), compute_uv=False)
    ok = (sv[:, 0] > 0) & (sv[:, 1] >= 1e-9 * sv[:, 0])
    U, _, Vt = np.linalg.svd(np.einsum("mki,mkj->mij", A, B))
    V = np.swapaxes(Vt, 1, 2)
    d = np.sign(np.linalg.det(V @ np.swapaxes(U, 1, 2)))
    D = np.zeros((len(P), 3, 3))
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ np.swapaxes(U, 1, 2)
    t = cq - np.einsum("mij,mj->mi", R, cp)
    return R, t, ok


def group_ransac(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    n = len(cset)
    if n < 3:
        raise ValueError("ransac needs at least 3 correspondences")
    rng = np.random.default_rng(params.rng_seed)
    thresh = params.d_ransac * ctx.pr
    triples = sample_triples(rng, n, params.N_ransac)
    best_count, best = -1, None
    for start in range(0, len(triples), _RANSAC_CHUNK):
        tri = triples[start:start + _RANSAC_CHUNK]
        R, t, ok = batch_rigid_transforms(cset.src[tri], cset.dst[tri])
        if not ok.any():
            continue
        R, t = R[ok], t[ok]
        moved = np.matmul(cset.src[None], np.swapaxes(R, 1, 2)) + t[:, None, :]
        counts = (np.linalg.norm(moved - cset.dst[None], axis=2) < thresh).sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), (R[k], t[k])
    scores = np.zeros(n)
    if best is None:
        return GroupingResult("ransac", [], scores)
    T = RigidTransform(best[0], best[1])
    selected = np.flatnonzero(np.linalg.norm(T.apply(cset.src) - cset.dst, axis=1) < thresh)
    scores[selected] = 1.0
    return GroupingResult("ransac", selected, scores, transform=T)


def principal_eigenvector(M: np.ndarray, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Power iteration from the all-ones vector, L2-normalized each step."""
    n = len(M)
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return np.zeros(n)
        w /= norm
        if np.max(np.abs(w - v)) < tol:
            return w
        v = w
    return v


def group_st(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    """Spectral grouping with greedy one-to-one conflict removal.

    The eigenvector is computed once; accepted correspondences exclude every
    other correspondence reusing their source or target keypoint.
    """
    n = len(cset)
    if n == 0:
        raise ValueError("st needs at least 1 correspondence")
    if n == 1:
        return GroupingResult("st", [0], np.ones(1))
    M = rigidity_ratio_matrix(cset)
    M[M < params.t_st] = 0.0
    np.fill_diagonal(M, 0.0)
    v = np.abs(principal_eigenvector(M))
    excluded = np.zeros(n, dtype=bool)
    selected = []
    for i in np.lexsort((np.arange(n), -v)):
        if v[i] <= 0.0:
            break
        if excluded[i]:
            continue
        selected.append(i)
        excluded |= (cset.src_idx == cset.src_idx[i]) | (cset.dst_idx == cset.dst_idx[i])
    return GroupingResult("st", selected, v)


def group_gc(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    """Largest star cluster under |d - d'| < t_gc."""
    n = len(cset)
    if n == 0:
        raise ValueError("gc needs at least 1 correspondence")
    compat = rigidity_diff_matrix(cset) < params.t_gc * ctx.pr
    sizes = compat.sum(axis=1)
    best = int(np.argmax(sizes))
    return GroupingResult("gc", np.flatnonzero(compat[best]), sizes / n)


def hough_votes(cset: CorrespondenceSet, ctx: GroupingContext) -> np.ndarray:
    """Per-correspondence vote for the source centroid, in target coordinates."""
    require_lrfs(cset)
    cloud = ctx.source_cloud if ctx.source_cloud is not None else cset.source_cloud
    centroid = cloud.points.mean(axis=0) if cloud is not None else cset.src.mean(axis=0)
    v_global = centroid - cset.src
    v_local = np.einsum("nij,nj->ni", cset.src_lrf, v_global)
    return np.einsum("nji,nj->ni", cset.dst_lrf, v_local) + cset.dst


def group_3dhv(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    n = len(cset)
    if n == 0:
        raise ValueError("3dhv needs at least 1 correspondence")
    votes = hough_votes(cset, ctx)
    cloud = ctx.target_cloud if ctx.target_cloud is not None else cset.target_cloud
    anchor = cloud.points.min(axis=0) if cloud is not None and len(cloud) else cset.dst.min(axis=0)
    cells = np.floor((votes - anchor) / (params.hough_bin * ctx.pr)).astype(np.int64)
    uniq, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if params.hough_neighbors:
        lookup = {tuple(c): k for k, c in enumerate(uniq)}
        offsets = np.array([(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
        members = [
            [lookup[t] for t in map(tuple, c + offsets) if t in lookup] for c in uniq
        ]
        acc = np.array([counts[m].sum() for m in members])
        peak = int(np.argmax(acc))
        peak_cells = np.zeros(len(uniq), dtype=bool)
        peak_cells[members[peak]] = True
        selected = np.flatnonzero(peak_cells[inverse])
        scores = acc[inverse] / acc[peak]
    else:
        # np.unique sorts rows lexicographically, so argmax breaks ties toward the smallest cell
        peak = int(np.argmax(counts))
        selected = np.flatnonzero(inverse == peak)
        scores = counts[inverse] / counts[peak]
    return GroupingResult("3dhv", selected, scores)


def replicator_dynamics(payoff: np.ndarray, max_iter: int, x0: np.ndarray | None = None,
                        tol: float = 1e-12, history: bool = False):
    """Discrete replicator dynamics x_i <- x_i (Px)_i / x'Px.

    Stops early when the mean payoff drops below 1e-15 or the max-norm step
    is under ``tol``. With ``history=True`` also returns every iterate.
    """
    n = len(payoff)
    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    trace = [x]
    for _ in range(max_iter):
        px = payoff @ x
        mean = float(x @ px)
        if mean < 1e-15:
            break
        x_new = x * px / mean
        x_new /= x_new.sum()
        step = np.max(np.abs(x_new - x))
        x = x_new
        trace.append(x)
        if step < tol:
            break
    return (x, trace) if history else x


def group_gtm(cset: CorrespondenceSet, params: GrouperParams, ctx: GroupingContext) -> GroupingResult:
    n = len(cset)
    if n < 2:
        raise ValueError("gtm needs at least 2 correspondences")
    payoff = rigidity_ratio_matrix(cset)
    np.fill_diagonal(payoff, 0.0)
    x0 = None
    if params.gtm_jitter > 0:
        rng = np.random.default_rng(params.rng_seed)
        x0 = np.full(n, 1.0 / n) * (1.0 + params.gtm_jitter * rng.uniform(-1, 1, n))
    x = replicator_dynamics(payoff, params.N_gtm, x0)
    return GroupingResult("gtm", select_above(x, params.t_gtm), x)
