import math

import numpy as np
import pytest

from viewstitch import synthetic as syn
from viewstitch.affinity import DEFAULT_K
from viewstitch.geometry import UnitQuaternion, rotation_geodesic
from viewstitch.pose_space import top_k_hypotheses

BOTH = syn.SceneParams(n_objects=3, visibility="both", partial_overlap=False)


@pytest.fixture(scope="module")
def bins():
    return syn.default_bins()


def test_single_shared_object_gives_one_pair():
    for seed in range(5):
        scene = syn.generate_scene(syn.SceneParams(n_objects=1, visibility="both", partial_overlap=False), seed)
        assert scene.gt_correspondence.pairs == frozenset({(0, 0)})


def test_duplicates_share_voxel_grids():
    for seed in range(5):
        scene = syn.generate_scene(BOTH, seed, duplicate_shape_prob=1.0)
        assert len({id(o.voxels) for o in scene.objects}) == 1


def test_partial_overlap_filter():
    params = syn.SceneParams(n_objects=4)
    for seed in range(10):
        scene = syn.generate_scene(params, seed)
        s1, s2 = (set(scene.view_indices(v)) for v in (0, 1))
        assert s1 & s2 and not s1 <= s2 and not s2 <= s1
        assert len(scene.gt_correspondence) == len(s1 & s2)


def test_gt_correspondence_is_one_to_one_between_visible_objects():
    scene = syn.generate_scene(syn.SceneParams(n_objects=5), 3)
    pairs = scene.gt_correspondence.pairs
    assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs})
    i1, i2 = scene.view_indices(0), scene.view_indices(1)
    for i, j in pairs:
        assert i1[i] == i2[j]


def test_views_are_the_same_world_objects():
    scene = syn.generate_scene(BOTH, 4)
    q, t = scene.relative_pose()
    for a, b in zip(scene.view_objects(0), scene.view_objects(1)):
        np.testing.assert_allclose(q.rotate(a.transform.t).reshape(3) + t, b.transform.t, atol=1e-9)


def test_generation_is_deterministic(bins):
    a = syn.make_pair(BOTH, syn.NoiseModel.moderate(), seed=11, bins=bins)
    b = syn.make_pair(BOTH, syn.NoiseModel.moderate(), seed=11, bins=bins)
    assert np.array_equal(a.affinity.values, b.affinity.values)
    assert np.array_equal(a.distribution.rotation_probs, b.distribution.rotation_probs)
    for x, y in zip(a.view1 + a.view2, b.view1 + b.view2):
        assert np.array_equal(x.transform.matrix(), y.transform.matrix()) and x.embedding == y.embedding


def test_zero_noise_affinity_and_top1(bins):
    for seed in range(10):
        pair = syn.make_pair(BOTH, syn.NoiseModel(), seed=seed, bins=bins)
        expected = 1 / (1 + math.exp(-DEFAULT_K))
        for i, j in pair.scene.gt_correspondence:
            assert pair.affinity.values[i, j] == pytest.approx(expected, abs=1e-12)
        top = top_k_hypotheses(pair.distribution, 1, 1)[0]
        assert (top.rotation_bin, top.translation_bin) == pair.nearest_bin_pose()


def test_gt_pairs_have_higher_affinity(bins):
    noise = syn.NoiseModel(embedding_noise=0.5)
    gt_vals, other_vals, row_wins, rows = [], [], 0, 0
    for seed in range(100):
        scene = syn.generate_scene(syn.SceneParams(n_objects=4), seed)
        _, _, aff, _ = syn.corrupt_to_observations(scene, noise, bins, seed)
        mask = scene.gt_correspondence.as_matrix(*aff.shape)
        gt_vals.extend(aff.values[mask])
        other_vals.extend(aff.values[~mask])
        for i, j in scene.gt_correspondence:
            rows += 1
            row_wins += aff.values[i, j] == aff.values[i].max()
    assert min(gt_vals) > max(other_vals)
    assert row_wins == rows


def test_pose_top1_accuracy_is_calibrated(bins):
    rng = np.random.default_rng(0)
    rots, trans = syn.sample_relative_poses(syn.SceneParams(), 1000, seed=1)
    hits = 0
    for q_arr, t in zip(rots, trans):
        q = UnitQuaternion.from_wxyz(q_arr)
        dist = syn.pose_distribution(q, t, bins, 0.4, rng)
        hits += int(np.argmax(dist.rotation_probs)) == bins[0].nearest(q)
    assert abs(hits / 1000 - 0.4) <= 0.04


def test_emitted_affinities_are_valid(bins):
    for seed in range(10):
        pair = syn.make_pair(syn.SceneParams(n_objects=5), syn.NoiseModel.moderate(), seed=seed, bins=bins)
        a = pair.affinity.values
        assert a.shape == (len(pair.view1), len(pair.view2))
        assert ((a >= 0) & (a <= 1)).all()
        for o in pair.view1 + pair.view2:
            assert np.linalg.norm(o.embedding) == pytest.approx(1.0, abs=1e-9)


def test_moderate_noise_perturbs_poses(bins):
    pair = syn.make_pair(BOTH, syn.NoiseModel.moderate(), seed=2, bins=bins)
    truth = pair.scene.view_objects(0)
    errs = [rotation_geodesic(a.transform.rotation, b.transform.rotation) for a, b in zip(pair.view1, truth)]
    assert max(errs) > 0


def test_invalid_parameters():
    with pytest.raises(ValueError):
        syn.SceneParams(n_objects=0)
    with pytest.raises(ValueError):
        syn.SceneParams(visibility="sometimes")
    with pytest.raises(ValueError):
        syn.NoiseModel(pose_top1_accuracy=1.5)


def test_unsatisfiable_scene_raises():
    params = syn.SceneParams(n_objects=10, room_min=1.0, room_max=1.0, max_retries=3)
    with pytest.raises(syn.SceneGenerationError):
        syn.generate_scene(params, 0)
