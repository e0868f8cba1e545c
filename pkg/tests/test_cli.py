import json
import os
import subprocess
import sys

import numpy as np
import pytest

from viewstitch import serialize as io
from viewstitch import synthetic as syn
from viewstitch.affinity import AffinityMatrix
from viewstitch.cli import main
from viewstitch.geometry import SceneObject, SimilarityTransform, UnitQuaternion, VoxelGrid
from viewstitch.pose_space import CameraPoseDistribution, RotationBinSet, TranslationBinSet
from viewstitch.stitcher import Correspondence

BOX = VoxelGrid.from_dense(np.ones((4, 4, 4)))
IDENT = (UnitQuaternion.identity(), (0.0, 0.0, 0.0))


@pytest.fixture(scope="module")
def zero_noise_file(tmp_path_factory):
    pair = syn.make_pair(syn.SceneParams(n_objects=3, visibility="both", partial_overlap=False), syn.NoiseModel(), seed=4)
    path = tmp_path_factory.mktemp("scenes") / "zero.json"
    io.save_json(path, io.scene_pair_to_dict(io.scene_pair_from_synthetic(pair)))
    return path


def box(name, t, score=1.0, category="chair", embedding=None):
    return SceneObject(name, BOX, SimilarityTransform(UnitQuaternion.identity(), t), score, embedding, category)


def single_bin_camera():
    return CameraPoseDistribution(RotationBinSet((UnitQuaternion.identity(),)), TranslationBinSet(np.zeros((1, 3))), [1.0], [1.0])


def write_pair(path, sp):
    io.save_json(path, io.scene_pair_to_dict(sp))
    return path


# ---------------------------------------------------------------------------
# stitch


def test_stitch_zero_noise_matches_ground_truth(zero_noise_file, tmp_path):
    out = tmp_path / "report.json"
    assert main(["stitch", str(zero_noise_file), "--out", str(out), "--seed", "1"]) == 0
    report = json.loads(out.read_text())
    truth = io.load_scene_pair(zero_noise_file).ground_truth
    assert sorted(map(tuple, report["correspondence"])) == sorted(truth.correspondence.pairs)
    weighted = report["terms"]["weighted"]
    assert sum(weighted.values()) == pytest.approx(report["objective"], abs=1e-9)


def test_stitch_missing_affinity_and_embeddings(tmp_path, capsys):
    sp = io.ScenePairFile(((box("a", (0, 0, 3)),), (box("b", (0, 0, 3)),)), single_bin_camera())
    path = write_pair(tmp_path / "p.json", sp)
    assert main(["stitch", str(path), "--out", str(tmp_path / "r.json")]) == 1
    assert "affinity" in capsys.readouterr().err


def test_stitch_single_sample_on_one_by_one(tmp_path):
    e = (1.0,) + (0.0,) * 7
    sp = io.ScenePairFile(((box("a", (0, 0, 3), embedding=e),), (box("b", (0, 0, 3), embedding=e),)), single_bin_camera())
    path = write_pair(tmp_path / "p.json", sp)
    out = tmp_path / "r.json"
    assert main(["stitch", str(path), "--k-samples", "1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["correspondence"] == [[0, 0]]


def test_stitch_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"version": 1, "views": [')
    assert main(["stitch", str(bad)]) == 1
    assert "malformed JSON" in capsys.readouterr().err


def test_stitch_invalid_weight(zero_noise_file):
    assert main(["stitch", str(zero_noise_file), "--lambda-s", "-1"]) == 1


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_self_is_perfect(zero_noise_file, tmp_path):
    out = tmp_path / "eval.json"
    assert main(["evaluate", str(zero_noise_file), str(zero_noise_file), "--format", "json", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep["detection_ap"].values()) == {1.0}
    assert rep["correspondence_ap"] == 1.0
    assert rep["pose"]["trans_median"] == 0.0


def _fixture_files(tmp_path):
    """Three predictions (TP 0.9, FP 0.8, TP 0.7) against two ground-truth chairs."""
    gt_objs = (box("g1", (0, 0, 3)), box("g2", (3, 0, 3)))
    preds = (box("p1", (0, 0, 3), 0.9), box("p2", (3, 0, 3), 0.8, "lamp"), box("p3", (3, 0, 3), 0.7))
    views = ((box("a", (0, 0, 3)),), (box("b", (0, 0, 3)),))

    def block(objs):
        vis = (tuple(True for _ in objs), (True,) + tuple(False for _ in objs[1:]))
        return io.GroundTruthBlock(objs, IDENT, IDENT, vis, Correspondence({(0, 0)}), IDENT)

    aff = AffinityMatrix([[0.9]])
    pred = write_pair(tmp_path / "pred.json", io.ScenePairFile(views, single_bin_camera(), aff, block(preds)))
    gt = write_pair(tmp_path / "gt.json", io.ScenePairFile(views, single_bin_camera(), aff, block(gt_objs)))
    return pred, gt


def test_evaluate_fixture_and_format_parity(tmp_path):
    pred, gt = _fixture_files(tmp_path)
    jout, tout = tmp_path / "e.json", tmp_path / "e.txt"
    assert main(["evaluate", str(pred), str(gt), "--format", "json", "--out", str(jout)]) == 0
    assert main(["evaluate", str(pred), str(gt), "--format", "text", "--out", str(tout)]) == 0
    rep, text = json.loads(jout.read_text()), tout.read_text()
    assert rep["detection_ap"]["all"] == pytest.approx(5 / 6, abs=1e-12)
    for value in rep["detection_ap"].values():
        assert f"{value:.6f}" in text
    assert f"{rep['correspondence_ap']:.6f}" in text


def test_evaluate_without_ground_truth(zero_noise_file, tmp_path):
    sp = io.load_scene_pair(zero_noise_file)
    bare = write_pair(tmp_path / "bare.json", io.ScenePairFile(sp.views, sp.camera, sp.affinity))
    assert main(["evaluate", str(zero_noise_file), str(bare)]) == 1


# ---------------------------------------------------------------------------
# generate


def test_generate_files_and_determinism(tmp_path):
    args = ["generate", "--scenes", "5", "--objects", "3", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["manifest.json"] + [f"scene_{k:04d}.json" for k in range(5)]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the generated corpus evaluates against itself end to end
    assert main(["evaluate", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "e.txt")]) == 0


def test_generate_object_bound(tmp_path):
    assert main(["generate", "--scenes", "2", "--objects", "10", "--seed", "1", "--out", str(tmp_path)]) == 0
    for k in range(2):
        sp = io.load_scene_pair(tmp_path / f"scene_{k:04d}.json")
        assert all(len(v) <= 10 for v in sp.views)


def test_generate_rejects_bad_noise(tmp_path):
    assert main(["generate", "--scenes", "1", "--pose-accuracy", "2", "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# cluster


def _corpus(tmp_path, n_rot, n_trans, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n_rot, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    path = tmp_path / "poses.json"
    path.write_text(json.dumps({"rotations_wxyz": q.tolist(), "translations": rng.normal(size=(n_trans, 3)).tolist()}))
    return path, q


def test_cluster_distinct_inputs_are_returned(tmp_path):
    path, q = _corpus(tmp_path, 30, 80)
    out = tmp_path / "bins.json"
    assert main(["cluster", "--poses", str(path), "--out", str(out)]) == 0
    bins = json.loads(out.read_text())
    cents = np.array([b["q_wxyz"] for b in bins["rotation_bins"]])
    assert len(cents) == 30 and len(bins["translation_bins"]) == 60
    np.testing.assert_allclose(np.linalg.norm(cents, axis=1), 1.0, atol=1e-9)
    # every input is some centroid up to sign
    dots = np.abs(q @ cents.T)
    np.testing.assert_allclose(dots.max(axis=1), 1.0, atol=1e-12)


def test_cluster_k_exceeds_corpus(tmp_path):
    path, _ = _corpus(tmp_path, 10, 80)
    assert main(["cluster", "--poses", str(path)]) == 1


def test_cluster_seed_env_and_help(tmp_path):
    path, _ = _corpus(tmp_path, 40, 80)
    env = dict(os.environ, SEED="5")
    run = lambda *a, **kw: subprocess.run([sys.executable, "-m", "viewstitch.cli", *a], capture_output=True, text=True, **kw)
    a = run("cluster", "--poses", str(path), env=env)
    b = run("cluster", "--poses", str(path), "--seed", "5")
    assert a.returncode == b.returncode == 0 and a.stdout == b.stdout
    helptext = run("stitch", "--help").stdout
    assert "default: 128" in helptext and "default: 5.0" in helptext
    assert run("cluster", "--poses", str(path), env=dict(os.environ, SEED="abc")).returncode != 0
