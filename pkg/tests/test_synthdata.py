import numpy as np
import pytest

from cgbench.bench import label_ground_truth
from cgbench.geometry import PointCloud, RigidTransform
from cgbench.synthdata import (
    add_gaussian_noise,
    bumpy_cloud,
    clutter_occlusion_metrics,
    compose_scene,
    compute_overlap,
    downsample_random,
    make_partial_pair,
    sphere_cloud,
    synth_correspondences,
)


def test_noise_zero_is_identity():
    c = bumpy_cloud(500, 0)
    assert np.array_equal(add_gaussian_noise(c, 0.0, 1).points, c.points)


def test_noise_statistics():
    c = sphere_cloud(10000)
    noisy = add_gaussian_noise(c, 0.5, 2)
    sd = (noisy.points - c.points).std(axis=0)
    assert np.all(np.abs(sd - 0.5 * c.resolution) <= 0.05 * 0.5 * c.resolution)
    assert noisy.meta["source_resolution"] == c.resolution
    assert len(noisy) == len(c)


def test_noise_deterministic():
    c = bumpy_cloud(300, 1)
    assert np.array_equal(add_gaussian_noise(c, 0.3, 7).points, add_gaussian_noise(c, 0.3, 7).points)


def test_downsample_contracts():
    c = bumpy_cloud(1000, 2)
    assert np.array_equal(downsample_random(c, 1.0, 0).points, c.points)
    half = downsample_random(c, 0.5, 0)
    assert len(half) == 500
    assert np.array_equal(half.points, c.points[half.meta["source_indices"]])
    assert np.array_equal(half.points, downsample_random(c, 0.5, 0).points)
    assert not np.array_equal(half.points, downsample_random(c, 0.5, 1).points)
    with pytest.raises(ValueError):
        downsample_random(PointCloud(np.eye(3)), 0.3, 0)


def test_overlap_trivial_cases():
    c = sphere_cloud(500)
    ident = RigidTransform.identity()
    assert compute_overlap(c, c, ident, 1e-6) == 1.0
    far = c.transformed(RigidTransform(np.eye(3), [100 * c.resolution, 0, 0]))
    assert compute_overlap(c, far, ident, 5 * c.resolution) == 0.0


def test_overlap_brute_force():
    rng = np.random.default_rng(3)
    shared = rng.uniform(size=(60, 3))
    a = PointCloud(np.vstack([shared, rng.uniform(size=(40, 3)) + 5]))
    b = PointCloud(np.vstack([shared, rng.uniform(size=(40, 3)) - 5]))
    gt = RigidTransform.identity()
    eps = 0.01
    hits = sum(any(np.linalg.norm(p - q) <= eps for q in b.points) for p in a.points)
    assert compute_overlap(a, b, gt, eps) == hits / 100


def test_partial_pair_hits_target():
    model = bumpy_cloud(2000, 4)
    T = RigidTransform.random(np.random.default_rng(4), 1.0)
    for target in (0.3, 0.6, 0.9, 1.0):
        pair = make_partial_pair(model, target, T, seed=5)
        got = compute_overlap(pair.source, pair.target, T, 5 * model.resolution)
        assert abs(got - target) <= 0.05
        assert len(pair.source) and len(pair.target)


def test_partial_pair_sphere_low_overlap():
    pair = make_partial_pair(sphere_cloud(2000), 0.3, RigidTransform.identity(), seed=1)
    assert len(pair.source) > 0 and len(pair.target) > 0


def test_partial_pair_needs_points():
    with pytest.raises(ValueError):
        make_partial_pair(sphere_cloud(50), 0.5, RigidTransform.identity(), 0)


def test_clutter_occlusion_examples():
    assert clutter_occlusion_metrics(100, 100, 100) == (0.0, 0.0)
    assert clutter_occlusion_metrics(200, 100, 200) == (0.5, 0.5)
    with pytest.raises(ValueError):
        clutter_occlusion_metrics(0, 0, 10)


def test_composed_scene_bookkeeping():
    a, b = bumpy_cloud(800, 5), bumpy_cloud(600, 6)
    poses = [RigidTransform(np.eye(3), [-2, 0, 0]), RigidTransform(np.eye(3), [2, 0, 0])]
    scene, counts = compose_scene([a, b], poses, [0.7, 0.4], 300, seed=7)
    assert counts == [(560, 800), (240, 600)]
    assert len(scene) == 560 + 240 + 300
    clutter, occlusion = clutter_occlusion_metrics(scene, *counts[0])
    assert clutter == pytest.approx(1 - 560 / 1100)
    assert occlusion == pytest.approx(1 - 560 / 800)
    # the model's points come first and are exact copies of posed model points
    model_pts = poses[0].apply(a.points)
    d = np.min(np.linalg.norm(scene.points[:560, None] - model_pts[None], axis=2), axis=1)
    assert np.all(d < 1e-12)


def test_synth_all_inliers_exact():
    gt = RigidTransform.random(np.random.default_rng(8), 50)
    cs, labels = synth_correspondences(100, 1.0, gt, 0.0, 100, 1)
    assert labels.all()
    assert np.allclose(gt.apply(cs.src), cs.dst, atol=1e-9)


def test_synth_zero_inliers():
    gt = RigidTransform.random(np.random.default_rng(9), 5)
    cs, labels = synth_correspondences(300, 0.0, gt, 0.5, 20, 2)
    assert not label_ground_truth(cs, gt, 5.0).any()
    assert not labels.any()


def test_synth_counts_and_cross_check():
    gt = RigidTransform.random(np.random.default_rng(10), 50)
    for seed in range(5):
        cs, labels = synth_correspondences(1000, 0.1, gt, 0.5, 300, seed)
        assert labels.sum() == 100
        assert np.array_equal(label_ground_truth(cs, gt, 5.0), labels)
        assert cs.has_lrfs


def test_synth_lrf_jitter_angle():
    gt = RigidTransform.random(np.random.default_rng(11), 5)
    cs, labels = synth_correspondences(50, 1.0, gt, 0.0, 50, 3, lrf_jitter_deg=7.0)
    from cgbench.geometry import lrf_angle
    for i in range(50):
        ang = lrf_angle(cs.dst_lrf[i], cs.src_lrf[i] @ gt.rotation.T)
        assert ang == pytest.approx(7.0, abs=1e-6)


def test_synth_deterministic():
    gt = RigidTransform.identity()
    a, _ = synth_correspondences(200, 0.3, gt, 0.5, 100, 4)
    b, _ = synth_correspondences(200, 0.3, gt, 0.5, 100, 4)
    assert np.array_equal(a.src, b.src) and np.array_equal(a.sim, b.sim)
    assert np.array_equal(a.dst_lrf, b.dst_lrf)
