"""Random instances of the file-level data types."""

import numpy as np

from viewstitch.affinity import AffinityMatrix
from viewstitch.geometry import SceneObject, SimilarityTransform, UnitQuaternion, VoxelGrid
from viewstitch.pose_space import CameraPoseDistribution, RotationBinSet, TranslationBinSet
from viewstitch.serialize import GroundTruthBlock, ScenePairFile
from viewstitch.stitcher import Correspondence


def random_quat(rng):
    q = rng.normal(size=4)
    return UnitQuaternion.from_wxyz(q / np.linalg.norm(q))


def random_object(rng, name, with_embedding=True):
    r = int(rng.integers(1, 7))
    occ = (rng.uniform(size=r ** 3) < 0.4).astype(float)
    emb = None
    if with_embedding:
        e = rng.normal(size=8)
        emb = tuple(e / np.linalg.norm(e))
    category = None if rng.uniform() < 0.3 else str(rng.choice(["chair", "table", "box"]))
    return SceneObject(
        name,
        VoxelGrid(r, occ),
        SimilarityTransform(random_quat(rng), rng.normal(size=3) * 3, rng.uniform(0.1, 3, size=3)),
        float(rng.uniform()),
        emb,
        category,
    )


def random_matching(rng, n, m):
    k = int(rng.integers(0, min(n, m) + 1))
    rows = rng.permutation(n)[:k]
    cols = rng.permutation(m)[:k]
    return Correspondence({(int(i), int(j)) for i, j in zip(rows, cols)})


def random_distribution(rng):
    kr, kt = int(rng.integers(1, 6)), int(rng.integers(1, 6))
    return CameraPoseDistribution(
        RotationBinSet(tuple(random_quat(rng) for _ in range(kr))),
        TranslationBinSet(rng.normal(size=(kt, 3))),
        rng.dirichlet(np.ones(kr)),
        rng.dirichlet(np.ones(kt)),
    )


def random_scene_pair_file(rng) -> ScenePairFile:
    n, m = int(rng.integers(0, 5)), int(rng.integers(0, 5))
    with_emb = rng.uniform() < 0.5
    views = (
        tuple(random_object(rng, f"a{k}", with_emb) for k in range(n)),
        tuple(random_object(rng, f"b{k}", with_emb) for k in range(m)),
    )
    affinity = AffinityMatrix(rng.uniform(size=(n, m))) if rng.uniform() < 0.7 else None
    gt = None
    if rng.uniform() < 0.5:
        n_world = int(rng.integers(1, 6))
        vis = (tuple(bool(b) for b in rng.uniform(size=n_world) < 0.7),
               tuple(bool(b) for b in rng.uniform(size=n_world) < 0.7))
        gt = GroundTruthBlock(
            objects=tuple(random_object(rng, f"w{k}", False) for k in range(n_world)),
            camera1=(random_quat(rng), tuple(rng.normal(size=3))),
            camera2=(random_quat(rng), tuple(rng.normal(size=3))),
            visibility=vis,
            correspondence=random_matching(rng, sum(vis[0]), sum(vis[1])),
            relative_pose=(random_quat(rng), tuple(rng.normal(size=3))),
        )
    return ScenePairFile(views, random_distribution(rng), affinity, gt)
