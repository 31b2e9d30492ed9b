"""Shared fixtures for grouping tests (imported by test modules)."""
import numpy as np

from cgbench.features import CorrespondenceSet
from cgbench.geometry import PointCloud, RigidTransform, random_rotation


def exact_set(n, seed, extent=100.0, ratio=1.0):
    """All-inlier set: targets are gt-mapped sources, LRFs perfectly repeatable."""
    rng = np.random.default_rng(seed)
    gt = RigidTransform.random(rng, extent)
    src = rng.uniform(-extent / 2, extent / 2, size=(n, 3))
    src_lrf = np.array([random_rotation(rng) for _ in range(n)])
    cs = CorrespondenceSet(src, gt.apply(src), np.ones(n), np.full(n, ratio),
                           src_lrf=src_lrf, dst_lrf=src_lrf @ gt.rotation.T,
                           source_cloud=PointCloud(src), target_cloud=PointCloud(gt.apply(src)),
                           meta={"pr": 1.0})
    return cs, gt


def planted_cluster(seed, n_in=20, n_out=100, side=10.0, shell=(1000.0, 2000.0)):
    """Rigid cluster of n_in exact matches plus outliers whose targets sit far away.

    Outlier sources share the cluster's cube; their targets lie in a distant
    shell, so every pair involving an outlier breaks the rigidity ratio.
    Returns (cset, labels) with rows shuffled.
    """
    rng = np.random.default_rng(seed)
    gt = RigidTransform.random(rng, side)
    src = rng.uniform(0, side, size=(n_in + n_out, 3))
    dst = np.empty_like(src)
    dst[:n_in] = gt.apply(src[:n_in])
    d = rng.normal(size=(n_out, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    dst[n_in:] = d * rng.uniform(*shell, size=(n_out, 1))
    labels = np.arange(n_in + n_out) < n_in
    perm = rng.permutation(n_in + n_out)
    n = n_in + n_out
    cs = CorrespondenceSet(src[perm], dst[perm], rng.uniform(size=n), rng.uniform(size=n),
                           meta={"pr": 1.0})
    return cs, labels[perm]


def connected_component(adj, seeds):
    """Indices reachable from ``seeds`` in the boolean adjacency matrix."""
    seen = set(int(s) for s in seeds)
    stack = list(seen)
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if int(j) not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return sorted(seen)
