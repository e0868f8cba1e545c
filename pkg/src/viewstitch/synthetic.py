"""Synthetic two-view scenes with exact ground truth.

Rooms are filled with primitive voxel furniture (boxes, L-shapes, tables),
seen by two level cameras at a fixed downward pitch. ``corrupt_to_observations``
turns a scene into what the stitcher consumes: noisy per-view objects, an
affinity matrix from perturbed embeddings and a binned camera-pose
distribution with controlled top-1 accuracy.

World frame: ``y`` up, floor at ``y = 0``. Camera frame: ``+z`` forward,
``+y`` up, ``+x = y cross z``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .affinity import AffinityMatrix, build_affinity
from .geometry import SceneObject, SimilarityTransform, UnitQuaternion, VoxelGrid, rotation_geodesic
from .pose_space import (
    CameraPoseDistribution,
    PoseHypothesis,
    RotationBinSet,
    TranslationBinSet,
    kmeans_translations,
    spherical_kmeans_rotations,
)
from .stitcher import Correspondence

EMBEDDING_DIM = 64
SHAPE_KINDS = ("box", "lshape", "table")


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    trans_sigma: float = 0.0
    rot_sigma: float = 0.0
    scale_sigma: float = 0.0
    embedding_noise: float = 0.0
    pose_top1_accuracy: float = 1.0
    duplicate_shape_prob: float = 0.0
    duplicate_similarity: float = 0.5  # base-embedding cosine between copies of one model

    def __post_init__(self):
        for name in ("trans_sigma", "rot_sigma", "scale_sigma", "embedding_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("pose_top1_accuracy", "duplicate_shape_prob", "duplicate_similarity"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def moderate(cls, **overrides) -> "NoiseModel":
        """Noise levels roughly matching a decent single-view detector."""
        base = dict(
            trans_sigma=0.1,
            rot_sigma=math.radians(5),
            scale_sigma=0.1,
            embedding_noise=0.9,
            pose_top1_accuracy=0.4,
            duplicate_shape_prob=0.5,
            duplicate_similarity=0.9,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class SceneParams:
    n_objects: int = 5
    resolution: int = 32
    room_min: float = 5.0
    room_max: float = 8.0
    camera_height: float = 1.5
    camera_pitch: float = math.radians(-15)
    baseline_max: float = 2.5
    yaw_delta_max: float = math.radians(60)
    hfov: float = math.radians(70)
    vfov: float = math.radians(50)
    depth_min: float = 1.0
    depth_max: float = 7.0
    visibility: str = "frustum"  # or "both": every object seen by both cameras
    partial_overlap: bool = True  # reject pairs where one view's objects contain the other's
    max_retries: int = 200
    footprint: Tuple[float, float] = (0.5, 2.0)  # range of object width and depth, meters

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be at least 1")
        if not 0 < self.footprint[0] <= self.footprint[1]:
            raise ValueError("footprint must be an increasing pair of positive sizes")
        if self.visibility not in ("frustum", "both"):
            raise ValueError("visibility must be 'frustum' or 'both'")


@dataclass(frozen=True, eq=False)
class GroundTruthScene:
    objects: Tuple[SceneObject, ...]
    camera1: SimilarityTransform
    camera2: SimilarityTransform
    visibility: Tuple[Tuple[bool, ...], Tuple[bool, ...]]
    gt_correspondence: Correspondence

    def view_indices(self, view: int) -> List[int]:
        return [k for k, seen in enumerate(self.visibility[view]) if seen]

    def relative_pose(self) -> Tuple[UnitQuaternion, np.ndarray]:
        """Rigid map from camera-1 coordinates to camera-2 coordinates."""
        return relative_pose(self.camera1, self.camera2)

    def view_objects(self, view: int) -> List[SceneObject]:
        cam = (self.camera1, self.camera2)[view]
        return [world_to_camera(self.objects[k], cam) for k in self.view_indices(view)]

    def objects_in_view1(self) -> List[SceneObject]:
        """Every object seen by either camera, in camera-1 coordinates."""
        seen = [k for k in range(len(self.objects)) if self.visibility[0][k] or self.visibility[1][k]]
        return [world_to_camera(self.objects[k], self.camera1) for k in seen]


# ---------------------------------------------------------------------------
# primitives


def make_shape(kind: str, resolution: int, rng: np.random.Generator) -> VoxelGrid:
    """Primitive occupancy grid filling the unit cube; axis 1 of the grid is up."""
    r = resolution
    g = np.zeros((r, r, r))
    if kind == "box":
        g[:] = 1.0
    elif kind == "lshape":
        cut_x = int(rng.integers(r // 3, 2 * r // 3 + 1))
        cut_y = int(rng.integers(r // 3, 2 * r // 3 + 1))
        g[:, :cut_y, :] = 1.0
        g[:cut_x, :, :] = 1.0
    elif kind == "table":
        top = max(1, int(round(r * rng.uniform(0.1, 0.25))))
        leg = max(1, int(round(r * rng.uniform(0.1, 0.2))))
        g[:, r - top:, :] = 1.0
        for xs in (slice(0, leg), slice(r - leg, r)):
            for zs in (slice(0, leg), slice(r - leg, r)):
                g[xs, :, zs] = 1.0
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    return VoxelGrid.from_dense(g)


def _yaw(angle: float) -> UnitQuaternion:
    return UnitQuaternion.from_axis_angle((0.0, 1.0, 0.0), angle)


def camera_rotation(yaw: float, pitch: float) -> UnitQuaternion:
    """Camera-to-world rotation for a level camera turned by ``yaw`` and tilted by ``pitch``."""
    # positive rotation about camera x lifts +z towards -y, so negate to pitch down
    return _yaw(yaw) * UnitQuaternion.from_axis_angle((1.0, 0.0, 0.0), -pitch)


def world_to_camera(obj: SceneObject, camera: SimilarityTransform) -> SceneObject:
    inv = camera.rotation.conjugate()
    t = obj.transform
    moved = SimilarityTransform(inv * t.rotation, inv.rotate(t.t - camera.t)[0], t.scale)
    return SceneObject(obj.id, obj.voxels, moved, obj.score, obj.embedding, obj.category)


def relative_pose(camera1: SimilarityTransform, camera2: SimilarityTransform) -> Tuple[UnitQuaternion, np.ndarray]:
    inv2 = camera2.rotation.conjugate()
    return inv2 * camera1.rotation, inv2.rotate(camera1.t - camera2.t)[0]


def _in_frustum(p_world: np.ndarray, camera: SimilarityTransform, params: SceneParams) -> bool:
    p = camera.rotation.conjugate().rotate(p_world - camera.t)[0]
    if not params.depth_min <= p[2] <= params.depth_max:
        return False
    return abs(p[0]) <= p[2] * math.tan(params.hfov / 2) and abs(p[1]) <= p[2] * math.tan(params.vfov / 2)


def sample_cameras(params: SceneParams, rng: np.random.Generator, room: Tuple[float, float]):
    """Two camera-to-world poses inside a ``room[0] x room[1]`` floor centred on the origin."""
    w, d = room
    margin = 0.3
    for _ in range(params.max_retries):
        c1 = np.array([rng.uniform(-w / 2 + margin, w / 2 - margin), params.camera_height,
                       rng.uniform(-d / 2 + margin, -d / 2 + 0.4 * d)])
        yaw1 = math.atan2(-c1[0], -c1[2]) + rng.uniform(-math.pi / 6, math.pi / 6)
        radius = params.baseline_max * math.sqrt(rng.uniform())
        theta = rng.uniform(0, 2 * math.pi)
        c2 = c1 + np.array([radius * math.cos(theta), 0.0, radius * math.sin(theta)])
        if abs(c2[0]) > w / 2 - margin or abs(c2[2]) > d / 2 - margin:
            continue
        yaw2 = yaw1 + rng.uniform(-params.yaw_delta_max, params.yaw_delta_max)
        return (
            SimilarityTransform(camera_rotation(yaw1, params.camera_pitch), c1),
            SimilarityTransform(camera_rotation(yaw2, params.camera_pitch), c2),
        )
    raise SceneGenerationError("could not place two cameras inside the room")


def _random_size(rng: np.random.Generator, footprint: Tuple[float, float] = (0.5, 2.0)) -> np.ndarray:
    lo, hi = footprint
    return np.array([rng.uniform(lo, hi), rng.uniform(0.4, 1.2), rng.uniform(lo, hi)])


def _place_objects(params, rng, room, cams, sizes):
    w, d = room
    placed: List[Tuple[SimilarityTransform, float]] = []
    vis1: List[bool] = []
    vis2: List[bool] = []
    for size in sizes:
        radius = 0.5 * max(size[0], size[2])
        for _ in range(params.max_retries):
            cam = cams[int(rng.integers(2))] if params.visibility == "frustum" else cams[0]
            depth = rng.uniform(params.depth_min + 0.5, params.depth_max - 1.0)
            lateral = depth * math.tan(params.hfov / 2) * rng.uniform(-0.8, 0.8)
            fwd = cam.rotation.rotate([0.0, 0.0, 1.0])[0]
            fwd = np.array([fwd[0], 0.0, fwd[2]]) / math.hypot(fwd[0], fwd[2])
            side = np.array([fwd[2], 0.0, -fwd[0]])
            pos = cam.t + fwd * depth + side * lateral
            pos[1] = size[1] / 2
            if abs(pos[0]) > w / 2 - radius or abs(pos[2]) > d / 2 - radius:
                continue
            if any(math.hypot(*(pos - t.t)[[0, 2]]) < radius + r for t, r in placed):
                continue
            v1, v2 = _in_frustum(pos, cams[0], params), _in_frustum(pos, cams[1], params)
            if not (v1 or v2) or (params.visibility == "both" and not (v1 and v2)):
                continue
            placed.append((SimilarityTransform(_yaw(rng.uniform(0, 2 * math.pi)), pos, size), radius))
            vis1.append(v1)
            vis2.append(v2)
            break
        else:
            return None
    return [t for t, _ in placed], vis1, vis2


def generate_scene(params: SceneParams = SceneParams(), seed: int = 0, duplicate_shape_prob: float = 0.0) -> GroundTruthScene:
    """Random room, two cameras and ``params.n_objects`` visible objects.

    With ``duplicate_shape_prob`` each object after the first reuses, with that
    probability, the voxel grid, size and category of an earlier object
    (different placement). With ``params.partial_overlap`` the two views share
    at least one object and neither view's object set contains the other's.
    """
    rng = np.random.default_rng(seed)
    n = params.n_objects
    for _ in range(params.max_retries):
        room = (rng.uniform(params.room_min, params.room_max), rng.uniform(params.room_min, params.room_max))
        cams = sample_cameras(params, rng, room)
        kinds: List[str] = []
        grids: List[VoxelGrid] = []
        sizes: List[np.ndarray] = []
        for k in range(n):
            if k and rng.uniform() < duplicate_shape_prob:
                src = int(rng.integers(k))
                kinds.append(kinds[src])
                grids.append(grids[src])
                sizes.append(sizes[src])
            else:
                kind = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
                kinds.append(kind)
                grids.append(make_shape(kind, params.resolution, rng))
                sizes.append(_random_size(rng, params.footprint))
        out = _place_objects(params, rng, room, cams, sizes)
        if out is None:
            continue
        transforms, vis1, vis2 = out
        s1 = {k for k in range(n) if vis1[k]}
        s2 = {k for k in range(n) if vis2[k]}
        if params.partial_overlap and (not (s1 & s2) or s1 <= s2 or s2 <= s1):
            continue
        objects = tuple(SceneObject(f"obj{k}", grids[k], transforms[k], 1.0, None, kinds[k]) for k in range(n))
        idx1 = sorted(s1)
        idx2 = sorted(s2)
        pairs = frozenset((idx1.index(k), idx2.index(k)) for k in s1 & s2)
        return GroundTruthScene(objects, cams[0], cams[1], (tuple(vis1), tuple(vis2)), Correspondence(pairs))
    raise SceneGenerationError(f"no scene satisfied the visibility constraints after {params.max_retries} attempts")


# ---------------------------------------------------------------------------
# pose bins


def sample_relative_poses(params: SceneParams, n: int, seed: int = 0):
    """Relative camera poses drawn from the scene generator's camera model."""
    rng = np.random.default_rng(seed)
    rots, trans = [], []
    while len(rots) < n:
        room = (rng.uniform(params.room_min, params.room_max), rng.uniform(params.room_min, params.room_max))
        try:
            c1, c2 = sample_cameras(params, rng, room)
        except SceneGenerationError:
            continue
        q, t = relative_pose(c1, c2)
        rots.append(q.as_array())
        trans.append(t)
    return np.array(rots), np.array(trans)


@functools.lru_cache(maxsize=8)
def default_bins(
    params: SceneParams = SceneParams(), k_rot: int = 30, k_trans: int = 60, n_samples: int = 3000, seed: int = 7
) -> Tuple[RotationBinSet, TranslationBinSet]:
    """Pose bins clustered from relative poses of the generator's camera model."""
    rots, trans = sample_relative_poses(params, n_samples, seed)
    return (
        spherical_kmeans_rotations(rots, k_rot, seed=seed),
        kmeans_translations(trans, k_trans, seed=seed),
    )


def _bin_probs(dist_to_truth: np.ndarray, true_idx: int, accuracy: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Multinomial whose top entry is the true bin with probability ``accuracy``.

    The top bin (true, or a decoy drawn with distance-decaying weights) gets
    mass ``accuracy``; the remainder is spread over the other bins with the same
    decaying weights, jittered, and capped below the top mass.
    """
    n = dist_to_truth.shape[0]
    if n == 1:
        return np.ones(1)
    weights = np.exp(-0.5 * (dist_to_truth / tau) ** 2) * rng.lognormal(0.0, 0.5, n) + 1e-12
    if rng.uniform() < accuracy:
        top = true_idx
    else:
        decoy = weights.copy()
        decoy[true_idx] = 0.0
        top = int(rng.choice(n, p=decoy / decoy.sum()))
    top_mass = max(accuracy, 1.5 / n)
    rest = weights.copy()
    rest[top] = 0.0
    rest *= (1.0 - top_mass) / rest.sum()
    cap = top_mass * (1 - 1e-6)
    # water-fill anything above the cap into the remaining bins
    for _ in range(n):
        over = rest > cap
        if not over.any():
            break
        excess = float((rest[over] - cap).sum())
        rest[over] = cap
        free = (~over) & (np.arange(n) != top) & (rest < cap)
        if not free.any():
            break
        rest[free] += excess * rest[free] / rest[free].sum() if rest[free].sum() > 0 else excess / free.sum()
    probs = rest
    probs[top] = top_mass
    return probs / probs.sum()


def pose_distribution(
    true_rotation: UnitQuaternion,
    true_translation,
    bins: Tuple[RotationBinSet, TranslationBinSet],
    accuracy: float,
    rng: np.random.Generator,
    rot_tau: float = math.radians(20),
    trans_tau: float = 1.0,
) -> CameraPoseDistribution:
    rbins, tbins = bins
    rot_d = np.array([rotation_geodesic(c, true_rotation) for c in rbins.centroids])
    trans_d = np.linalg.norm(tbins.centroids - np.asarray(true_translation), axis=1)
    return CameraPoseDistribution(
        rbins,
        tbins,
        _bin_probs(rot_d, rbins.nearest(true_rotation), accuracy, rot_tau, rng),
        _bin_probs(trans_d, tbins.nearest(true_translation), accuracy, trans_tau, rng),
    )


# ---------------------------------------------------------------------------
# observations


def _simplex(k: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` unit vectors with pairwise dot ``-1/(k-1)``, randomly rotated in ``dim`` dims."""
    if k == 1:
        v = rng.normal(size=dim)
        return (v / np.linalg.norm(v))[None, :]
    if k > dim + 1:
        raise ValueError(f"cannot place {k} simplex vertices in {dim} dimensions")
    eye = np.eye(k)
    verts = eye - eye.mean(axis=0)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    # verts live in a (k-1)-dim subspace of R^k; embed and rotate
    basis, _ = np.linalg.qr(rng.normal(size=(dim, k)))
    return verts @ basis.T


def _perturb(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return v
    g = rng.normal(scale=sigma / math.sqrt(v.size - 1), size=v.size)
    g -= (g @ v) * v
    angle = float(np.linalg.norm(g))
    if angle == 0:
        return v
    out = math.cos(angle) * v + math.sin(angle) * (g / angle)
    return out / np.linalg.norm(out)


def _noisy(obj: SceneObject, noise: NoiseModel, rng: np.random.Generator) -> SimilarityTransform:
    t = obj.transform
    trans = t.t + rng.normal(scale=noise.trans_sigma, size=3) if noise.trans_sigma else t.t
    rot = t.rotation
    if noise.rot_sigma:
        rot = UnitQuaternion.from_rotvec(rng.normal(scale=noise.rot_sigma, size=3)) * rot
    scale = t.s
    if noise.scale_sigma:
        scale = scale * np.exp2(rng.normal(scale=noise.scale_sigma, size=3))
    return SimilarityTransform(rot, trans, scale)


def embedding_bases(
    scene: GroundTruthScene, rng: np.random.Generator, dim: int = EMBEDDING_DIM, similarity: float = 0.5
) -> np.ndarray:
    """One unit base vector per scene object.

    Objects get vertices of a regular simplex (pairwise dot ``-1/(k-1)``).
    Objects sharing a voxel grid also share a model vertex, mixed in so that
    duplicates have base cosine close to ``similarity``.
    """
    n = len(scene.objects)
    groups: List[int] = []
    seen = {}
    for o in scene.objects:
        groups.append(seen.setdefault(id(o.voxels), len(seen)))
    shared = [g for g in set(groups) if groups.count(g) > 1]
    verts = _simplex(n + len(shared), dim, rng)
    bases = verts[:n].copy()
    for slot, g in enumerate(sorted(shared)):
        for k in range(n):
            if groups[k] == g:
                v = math.sqrt(1.0 - similarity) * bases[k] + math.sqrt(similarity) * verts[n + slot]
                bases[k] = v / np.linalg.norm(v)
    return bases


def corrupt_to_observations(
    scene: GroundTruthScene,
    noise: NoiseModel,
    bins: Tuple[RotationBinSet, TranslationBinSet],
    seed: int = 0,
) -> Tuple[List[SceneObject], List[SceneObject], AffinityMatrix, CameraPoseDistribution]:
    """Per-view noisy detections, their affinity and a camera pose distribution."""
    if not len(bins[0]) or not len(bins[1]):
        raise ValueError("bin sets must be non-empty")
    rng = np.random.default_rng(seed)
    bases = embedding_bases(scene, rng, similarity=noise.duplicate_similarity)
    views = []
    for v, cam in enumerate((scene.camera1, scene.camera2)):
        objs = []
        for k in scene.view_indices(v):
            local = world_to_camera(scene.objects[k], cam)
            emb = _perturb(bases[k], noise.embedding_noise, rng)
            score = 1.0 if noise.trans_sigma == 0 else float(rng.uniform(0.5, 1.0))
            objs.append(
                SceneObject(local.id, local.voxels, _noisy(local, noise, rng), score, tuple(emb), local.category)
            )
        views.append(objs)
    affinity = build_affinity([o.embedding for o in views[0]], [o.embedding for o in views[1]])
    q, t = scene.relative_pose()
    dist = pose_distribution(q, t, bins, noise.pose_top1_accuracy, rng)
    return views[0], views[1], affinity, dist


@dataclass
class ScenePair:
    """Everything the stitcher and the evaluator need for one synthetic pair."""

    scene: GroundTruthScene
    view1: List[SceneObject]
    view2: List[SceneObject]
    affinity: AffinityMatrix
    distribution: CameraPoseDistribution
    seed: int

    @property
    def gt_pose(self) -> Tuple[UnitQuaternion, np.ndarray]:
        return self.scene.relative_pose()

    def nearest_bin_pose(self) -> Tuple[int, int]:
        q, t = self.gt_pose
        return self.distribution.rotation_bins.nearest(q), self.distribution.translation_bins.nearest(t)


def make_pair(
    params: SceneParams = SceneParams(),
    noise: NoiseModel = NoiseModel(),
    seed: int = 0,
    bins: Optional[Tuple[RotationBinSet, TranslationBinSet]] = None,
) -> ScenePair:
    if bins is None:
        bins = default_bins(SceneParams(camera_pitch=params.camera_pitch, baseline_max=params.baseline_max,
                                        yaw_delta_max=params.yaw_delta_max, camera_height=params.camera_height,
                                        room_min=params.room_min, room_max=params.room_max))
    ss = np.random.SeedSequence(seed)
    scene_seed, obs_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    scene = generate_scene(params, scene_seed, noise.duplicate_shape_prob)
    v1, v2, a, dist = corrupt_to_observations(scene, noise, bins, obs_seed)
    return ScenePair(scene, v1, v2, a, dist, seed)
