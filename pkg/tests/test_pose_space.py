import math

import numpy as np
import pytest

from viewstitch.geometry import UnitQuaternion
from viewstitch.pose_space import (
    CameraPoseDistribution,
    PoseHypothesis,
    PoseSpaceError,
    RotationBinSet,
    TranslationBinSet,
    kmeans,
    kmeans_translations,
    spherical_kmeans,
    spherical_kmeans_rotations,
    top_k_hypotheses,
)


def rot_z(theta):
    return UnitQuaternion.from_axis_angle((0, 0, 1), theta)


def dist(rot_probs, trans_probs):
    rb = RotationBinSet(tuple(rot_z(0.1 * k) for k in range(len(rot_probs))))
    tb = TranslationBinSet(np.array([[k, 0.0, 0.0] for k in range(len(trans_probs))]))
    return CameraPoseDistribution(rb, tb, rot_probs, trans_probs)


# ---------------------------------------------------------------------------
# bin sets and distributions


def test_translation_bins_must_be_distinct():
    with pytest.raises(PoseSpaceError):
        TranslationBinSet(np.zeros((2, 3)))


def test_distribution_checks_sums():
    with pytest.raises(PoseSpaceError):
        dist([0.5, 0.4], [1.0])
    with pytest.raises(PoseSpaceError):
        dist([1.2, -0.2], [1.0])
    d = dist([0.5, 0.5 + 1e-8], [1.0])
    assert d.rotation_probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_hypothesis_probability_range():
    with pytest.raises(PoseSpaceError):
        PoseHypothesis(UnitQuaternion.identity(), (0, 0, 0), rotation_prob=1.5)


# ---------------------------------------------------------------------------
# top-k


def test_top_k_count_default():
    rng = np.random.default_rng(0)
    r, t = rng.dirichlet(np.ones(30)), rng.dirichlet(np.ones(60))
    hyps = top_k_hypotheses(dist(r, t), 3, 10)
    assert len(hyps) == 30
    products = [h.rotation_prob * h.translation_prob for h in hyps]
    assert all(a >= b for a, b in zip(products, products[1:]))
    assert {h.rotation_bin for h in hyps} == set(np.argsort(-r)[:3].tolist())


def test_top_k_uniform_tie_break():
    hyps = top_k_hypotheses(dist([0.25] * 4, [0.2] * 5), 2, 3)
    assert [(h.rotation_bin, h.translation_bin) for h in hyps] == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_top_k_product_order():
    hyps = top_k_hypotheses(dist([0.7, 0.3], [0.6, 0.4]), 2, 2)
    products = [h.rotation_prob * h.translation_prob for h in hyps]
    assert products == pytest.approx([0.42, 0.28, 0.18, 0.12], abs=1e-12)
    assert [(h.rotation_bin, h.translation_bin) for h in hyps] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_top_k_range_checked():
    with pytest.raises(PoseSpaceError):
        top_k_hypotheses(dist([1.0], [1.0]), 2, 1)


# ---------------------------------------------------------------------------
# k-means


def test_kmeans_separated_clusters():
    x = np.array([[0, 0, 0]] * 5 + [[9, 9, 9]] * 5, dtype=float)
    c = kmeans_translations(x, 2, seed=1).centroids
    assert sorted(map(tuple, c)) == [(0, 0, 0), (9, 9, 9)]


def test_kmeans_single_cluster_is_mean():
    x = np.random.default_rng(2).normal(size=(40, 3))
    assert np.allclose(kmeans(x, 1).centroids[0], x.mean(axis=0))


def test_kmeans_k_equals_n_is_exact():
    x = np.array([[0, 0, 0], [1, 2, 3], [-4, 0, 1]], dtype=float)
    res = kmeans(x, 3, seed=5)
    assert res.costs[-1] == 0.0
    assert sorted(map(tuple, res.centroids)) == sorted(map(tuple, x))


def test_kmeans_errors():
    with pytest.raises(PoseSpaceError):
        kmeans(np.zeros((2, 3)), 3)
    with pytest.raises(PoseSpaceError):
        kmeans(np.zeros((5, 3)), 2)  # only one distinct sample


def test_kmeans_cost_non_increasing_and_deterministic():
    rng = np.random.default_rng(3)
    for seed in range(10):
        x = rng.normal(size=(300, 3)) * rng.uniform(0.5, 3)
        res = kmeans(x, 7, seed=seed)
        assert all(b <= a + 1e-9 * abs(a) for a, b in zip(res.costs, res.costs[1:]))
        again = kmeans(x, 7, seed=seed, workers=3)
        assert np.array_equal(res.centroids, again.centroids)


def test_spherical_identical_samples():
    q = UnitQuaternion.from_axis_angle((1, 1, 0), 0.4)
    bins = spherical_kmeans_rotations([q] * 10, 1)
    assert np.allclose(bins.centroids[0].as_array(), q.as_array(), atol=1e-12)


def test_spherical_double_cover():
    q = UnitQuaternion.from_axis_angle((0, 1, 0), 1.0).as_array()
    res = spherical_kmeans(np.array([q, -q]), 1)
    assert np.allclose(np.abs(res.centroids[0] @ q), 1.0)


def test_spherical_two_clusters():
    rng = np.random.default_rng(4)
    targets = [rot_z(0.0), rot_z(math.pi / 2)]
    samples = []
    for t in targets:
        for _ in range(20):
            q = (UnitQuaternion.from_rotvec(rng.normal(scale=1e-3, size=3)) * t).as_array()
            samples.append(q if rng.uniform() < 0.5 else -q)
    bins = spherical_kmeans_rotations(samples, 2, seed=0)
    for t in targets:
        assert min(np.linalg.norm(c.as_array() - t.as_array()) for c in bins.centroids) < 1e-2


def test_spherical_centroids_unit_and_cost_monotone():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(400, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    res = spherical_kmeans(x, 12, seed=2)
    assert np.abs(np.linalg.norm(res.centroids, axis=1) - 1).max() < 1e-9
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(res.costs, res.costs[1:]))
