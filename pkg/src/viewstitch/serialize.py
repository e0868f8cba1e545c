"""JSON interchange for scene pairs, bin sets and stitching reports.

Quaternions are stored as ``[w, x, y, z]``. Voxel grids are binarized
(occupancy above 0.5) and bit-packed: bit ``b`` of byte ``k`` holds flat index
``8k + b`` under the ``x * R**2 + y * R + z`` layout, and the bytes are base64
encoded.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .affinity import AffinityMatrix, build_affinity
from .geometry import GeometryError, SceneObject, SimilarityTransform, UnitQuaternion, VoxelGrid
from .pose_space import CameraPoseDistribution, PoseHypothesis, PoseSpaceError, RotationBinSet, TranslationBinSet
from .stitcher import Correspondence, ObjectiveTerms, StitchResult, StitchWeights

FORMAT_VERSION = 1
VOXEL_ENCODING = "b64bits"


class ValidationError(ValueError):
    """Malformed input; ``path`` names the offending field, e.g. ``views[1][0].voxels.data``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# field helpers


def _field(d: Any, key: str, path: str):
    if not isinstance(d, dict):
        raise ValidationError(path, "expected an object")
    if key not in d:
        raise ValidationError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else key


def _list(value, path: str, length: Optional[int] = None) -> list:
    if not isinstance(value, list):
        raise ValidationError(path, "expected a list")
    if length is not None and len(value) != length:
        raise ValidationError(path, f"expected {length} entries, got {len(value)}")
    return value


def _number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, "expected a number")
    if not math.isfinite(value):
        raise ValidationError(path, "must be finite")
    return float(value)


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(path, "expected an integer")
    return value


def _vector(value, path: str, length: Optional[int] = None) -> List[float]:
    return [_number(v, _join(path, k)) for k, v in enumerate(_list(value, path, length))]


# ---------------------------------------------------------------------------
# voxels


def encode_voxels(v: VoxelGrid) -> Dict[str, Any]:
    bits = np.packbits(v.occupancy > 0.5, bitorder="little")
    return {"resolution": v.resolution, "encoding": VOXEL_ENCODING, "data": base64.b64encode(bits.tobytes()).decode("ascii")}


def decode_voxels(d, path: str = "voxels") -> VoxelGrid:
    r = _integer(_field(d, "resolution", path), _join(path, "resolution"))
    if r < 1:
        raise ValidationError(_join(path, "resolution"), "must be positive")
    enc = _field(d, "encoding", path)
    if enc != VOXEL_ENCODING:
        raise ValidationError(_join(path, "encoding"), f"unsupported encoding {enc!r}")
    data = _field(d, "data", path)
    if not isinstance(data, str):
        raise ValidationError(_join(path, "data"), "expected a base64 string")
    try:
        raw = base64.b64decode(data, validate=True)
    except ValueError as exc:
        raise ValidationError(_join(path, "data"), f"invalid base64: {exc}") from None
    cells = r ** 3
    if len(raw) != -(-cells // 8):
        raise ValidationError(_join(path, "data"), f"{len(raw)} bytes for {cells} cells, expected {-(-cells // 8)}")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little", count=cells)
    return VoxelGrid(r, bits.astype(np.float64))


# ---------------------------------------------------------------------------
# poses and objects


def _quat(value, path: str) -> UnitQuaternion:
    q = _vector(value, path, 4)
    if not any(q):
        raise ValidationError(path, "zero quaternion")
    if abs(math.sqrt(sum(c * c for c in q)) - 1.0) > 1e-6:
        raise ValidationError(path, "quaternion is not unit norm")
    return UnitQuaternion.from_wxyz(q)


def _floats(values) -> List[float]:
    return [float(v) for v in values]


def rigid_to_dict(rotation: UnitQuaternion, translation) -> Dict[str, Any]:
    return {"rotation_wxyz": _floats(rotation.as_array()), "translation": _floats(translation)}


def rigid_from_dict(d, path: str) -> Tuple[UnitQuaternion, List[float]]:
    return (
        _quat(_field(d, "rotation_wxyz", path), _join(path, "rotation_wxyz")),
        _vector(_field(d, "translation", path), _join(path, "translation"), 3),
    )


def object_to_dict(obj: SceneObject) -> Dict[str, Any]:
    t = obj.transform
    out = {
        "id": obj.id,
        "score": float(obj.score),
        "voxels": encode_voxels(obj.voxels),
        "translation": _floats(t.t),
        "rotation_wxyz": _floats(t.rotation.as_array()),
        "scale": _floats(t.s),
    }
    if obj.category is not None:
        out["category"] = obj.category
    if obj.embedding is not None:
        out["embedding"] = _floats(obj.embedding)
    return out


def object_from_dict(d, path: str) -> SceneObject:
    oid = _field(d, "id", path)
    if not isinstance(oid, str):
        raise ValidationError(_join(path, "id"), "expected a string")
    score = _number(_field(d, "score", path), _join(path, "score"))
    if not 0 <= score <= 1:
        raise ValidationError(_join(path, "score"), "must lie in [0, 1]")
    scale = _vector(_field(d, "scale", path), _join(path, "scale"), 3)
    if min(scale) <= 0:
        raise ValidationError(_join(path, "scale"), "components must be positive")
    transform = SimilarityTransform(
        _quat(_field(d, "rotation_wxyz", path), _join(path, "rotation_wxyz")),
        _vector(_field(d, "translation", path), _join(path, "translation"), 3),
        scale,
    )
    embedding = None
    if d.get("embedding") is not None:
        embedding = _vector(d["embedding"], _join(path, "embedding"))
        if abs(math.sqrt(sum(e * e for e in embedding)) - 1.0) > 1e-6:
            raise ValidationError(_join(path, "embedding"), "not unit norm")
    category = d.get("category")
    if category is not None and not isinstance(category, str):
        raise ValidationError(_join(path, "category"), "expected a string")
    try:
        return SceneObject(oid, decode_voxels(_field(d, "voxels", path), _join(path, "voxels")), transform, score,
                           None if embedding is None else tuple(embedding), category)
    except GeometryError as exc:
        raise ValidationError(path, str(exc)) from None


def objects_from_list(value, path: str) -> List[SceneObject]:
    return [object_from_dict(o, _join(path, k)) for k, o in enumerate(_list(value, path))]


def pose_to_dict(p: PoseHypothesis) -> Dict[str, Any]:
    return {
        **rigid_to_dict(p.rotation, p.translation),
        "rotation_prob": float(p.rotation_prob),
        "translation_prob": float(p.translation_prob),
        "rotation_bin": p.rotation_bin,
        "translation_bin": p.translation_bin,
    }


def pose_from_dict(d, path: str) -> PoseHypothesis:
    q, t = rigid_from_dict(d, path)
    return PoseHypothesis(
        q,
        t,
        _number(d.get("rotation_prob", 1.0), _join(path, "rotation_prob")),
        _number(d.get("translation_prob", 1.0), _join(path, "translation_prob")),
        _integer(d.get("rotation_bin", -1), _join(path, "rotation_bin")),
        _integer(d.get("translation_bin", -1), _join(path, "translation_bin")),
    )


def correspondence_to_list(c: Correspondence) -> List[List[int]]:
    return [[i, j] for i, j in c]


def correspondence_from_list(value, path: str, n: Optional[int] = None, m: Optional[int] = None) -> Correspondence:
    pairs = []
    for k, pair in enumerate(_list(value, path)):
        p = _join(path, k)
        i, j = (_integer(v, _join(p, a)) for a, v in enumerate(_list(pair, p, 2)))
        if i < 0 or j < 0 or (n is not None and i >= n) or (m is not None and j >= m):
            raise ValidationError(p, f"pair {(i, j)} out of range")
        pairs.append((i, j))
    try:
        return Correspondence(frozenset(pairs))
    except ValueError as exc:
        raise ValidationError(path, str(exc)) from None


# ---------------------------------------------------------------------------
# pose bins and distributions


def distribution_to_dict(dist: CameraPoseDistribution) -> Dict[str, Any]:
    return {
        "rotation_bins": [
            {"q_wxyz": _floats(q.as_array()), "prob": float(p)}
            for q, p in zip(dist.rotation_bins.centroids, dist.rotation_probs)
        ],
        "translation_bins": [
            {"t": _floats(t), "prob": float(p)} for t, p in zip(dist.translation_bins.centroids, dist.translation_probs)
        ],
    }


def distribution_from_dict(d, path: str = "camera") -> CameraPoseDistribution:
    rpath, tpath = _join(path, "rotation_bins"), _join(path, "translation_bins")
    rb = _list(_field(d, "rotation_bins", path), rpath)
    tb = _list(_field(d, "translation_bins", path), tpath)
    if not rb:
        raise ValidationError(rpath, "needs at least one bin")
    if not tb:
        raise ValidationError(tpath, "needs at least one bin")
    qs = [_quat(_field(b, "q_wxyz", _join(rpath, k)), _join(_join(rpath, k), "q_wxyz")) for k, b in enumerate(rb)]
    ts = [_vector(_field(b, "t", _join(tpath, k)), _join(_join(tpath, k), "t"), 3) for k, b in enumerate(tb)]
    rp = [_number(_field(b, "prob", _join(rpath, k)), _join(_join(rpath, k), "prob")) for k, b in enumerate(rb)]
    tp = [_number(_field(b, "prob", _join(tpath, k)), _join(_join(tpath, k), "prob")) for k, b in enumerate(tb)]
    for name, probs in ((rpath, rp), (tpath, tp)):
        if min(probs) < 0:
            raise ValidationError(name, "probabilities must be non-negative")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ValidationError(name, f"probabilities sum to {sum(probs):.9g}, not 1")
    try:
        return CameraPoseDistribution(RotationBinSet(tuple(qs)), TranslationBinSet(np.array(ts)), rp, tp)
    except PoseSpaceError as exc:
        raise ValidationError(path, str(exc)) from None


def bins_to_dict(rot: RotationBinSet, trans: TranslationBinSet) -> Dict[str, Any]:
    return {
        "rotation_bins": [{"q_wxyz": _floats(q.as_array())} for q in rot.centroids],
        "translation_bins": [{"t": _floats(t)} for t in trans.centroids],
    }


def bins_from_dict(d, path: str = "") -> Tuple[RotationBinSet, TranslationBinSet]:
    rpath, tpath = _join(path, "rotation_bins"), _join(path, "translation_bins")
    rb = _list(_field(d, "rotation_bins", path), rpath)
    tb = _list(_field(d, "translation_bins", path), tpath)
    try:
        return (
            RotationBinSet(tuple(_quat(_field(b, "q_wxyz", _join(rpath, k)), _join(_join(rpath, k), "q_wxyz"))
                                 for k, b in enumerate(rb))),
            TranslationBinSet(np.array([_vector(_field(b, "t", _join(tpath, k)), _join(_join(tpath, k), "t"), 3)
                                        for k, b in enumerate(tb)])),
        )
    except PoseSpaceError as exc:
        raise ValidationError(path or "bins", str(exc)) from None


# ---------------------------------------------------------------------------
# scene pair files


@dataclass(frozen=True)
class GroundTruthBlock:
    """Ground truth carried by a scene-pair file; ``objects`` are in the world frame."""

    objects: Tuple[SceneObject, ...]
    camera1: Tuple[UnitQuaternion, Tuple[float, ...]]
    camera2: Tuple[UnitQuaternion, Tuple[float, ...]]
    visibility: Tuple[Tuple[bool, ...], Tuple[bool, ...]]
    correspondence: Correspondence
    relative_pose: Tuple[UnitQuaternion, Tuple[float, ...]]

    def view1_objects(self) -> List[SceneObject]:
        """Objects seen by either camera, in camera-1 coordinates."""
        q, c = self.camera1
        inv = q.conjugate()
        out = []
        for k, obj in enumerate(self.objects):
            if self.visibility[0][k] or self.visibility[1][k]:
                t = obj.transform
                moved = SimilarityTransform(inv * t.rotation, inv.rotate(t.t - np.asarray(c))[0], t.scale)
                out.append(SceneObject(obj.id, obj.voxels, moved, obj.score, obj.embedding, obj.category))
        return out


@dataclass(frozen=True)
class ScenePairFile:
    views: Tuple[Tuple[SceneObject, ...], Tuple[SceneObject, ...]]
    camera: CameraPoseDistribution
    affinity: Optional[AffinityMatrix] = None
    ground_truth: Optional[GroundTruthBlock] = None
    version: int = FORMAT_VERSION

    def resolve_affinity(self) -> AffinityMatrix:
        """The stored affinity, or one built from the view embeddings."""
        if self.affinity is not None:
            return self.affinity
        for v, objs in enumerate(self.views):
            for k, o in enumerate(objs):
                if o.embedding is None:
                    raise ValidationError(f"affinity (or views[{v}][{k}].embedding)", "missing required field")
        return build_affinity([o.embedding for o in self.views[0]], [o.embedding for o in self.views[1]])


def ground_truth_to_dict(gt: GroundTruthBlock) -> Dict[str, Any]:
    return {
        "objects": [object_to_dict(o) for o in gt.objects],
        "camera1": rigid_to_dict(*gt.camera1),
        "camera2": rigid_to_dict(*gt.camera2),
        "visibility": [[bool(b) for b in row] for row in gt.visibility],
        "correspondence": correspondence_to_list(gt.correspondence),
        "relative_pose": rigid_to_dict(*gt.relative_pose),
    }


def ground_truth_from_dict(d, path: str = "ground_truth") -> GroundTruthBlock:
    objects = objects_from_list(_field(d, "objects", path), _join(path, "objects"))
    vpath = _join(path, "visibility")
    vis = _list(_field(d, "visibility", path), vpath, 2)
    rows = []
    for v, row in enumerate(vis):
        rp = _join(vpath, v)
        row = _list(row, rp, len(objects))
        if not all(isinstance(b, bool) for b in row):
            raise ValidationError(rp, "expected booleans")
        rows.append(tuple(row))
    c1 = rigid_from_dict(_field(d, "camera1", path), _join(path, "camera1"))
    c2 = rigid_from_dict(_field(d, "camera2", path), _join(path, "camera2"))
    rel = rigid_from_dict(_field(d, "relative_pose", path), _join(path, "relative_pose"))
    corr = correspondence_from_list(_field(d, "correspondence", path), _join(path, "correspondence"), sum(rows[0]), sum(rows[1]))
    return GroundTruthBlock(
        tuple(objects), (c1[0], tuple(c1[1])), (c2[0], tuple(c2[1])), (rows[0], rows[1]), corr, (rel[0], tuple(rel[1]))
    )


def scene_pair_to_dict(sp: ScenePairFile) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "version": sp.version,
        "views": [[object_to_dict(o) for o in view] for view in sp.views],
        "camera": distribution_to_dict(sp.camera),
    }
    if sp.affinity is not None:
        out["affinity"] = _floats(sp.affinity.values.reshape(-1))
    if sp.ground_truth is not None:
        out["ground_truth"] = ground_truth_to_dict(sp.ground_truth)
    return out


def scene_pair_from_dict(d) -> ScenePairFile:
    if not isinstance(d, dict):
        raise ValidationError("<root>", "expected an object")
    version = _integer(_field(d, "version", ""), "version")
    if version != FORMAT_VERSION:
        raise ValidationError("version", f"unsupported version {version}")
    views_raw = _list(_field(d, "views", ""), "views", 2)
    views = tuple(tuple(objects_from_list(v, f"views[{k}]")) for k, v in enumerate(views_raw))
    camera = distribution_from_dict(_field(d, "camera", ""), "camera")
    affinity = None
    if d.get("affinity") is not None:
        n, m = len(views[0]), len(views[1])
        flat = _vector(d["affinity"], "affinity", n * m)
        if any(not 0 <= a <= 1 for a in flat):
            raise ValidationError("affinity", "values must lie in [0, 1]")
        affinity = AffinityMatrix(np.array(flat, dtype=np.float64).reshape(n, m))
    gt = ground_truth_from_dict(d["ground_truth"]) if d.get("ground_truth") is not None else None
    return ScenePairFile(views, camera, affinity, gt, version)  # type: ignore[arg-type]


def scene_pair_from_synthetic(pair) -> ScenePairFile:
    """File representation of a ``synthetic.ScenePair``."""
    scene = pair.scene
    q, t = scene.relative_pose()
    gt = GroundTruthBlock(
        objects=tuple(scene.objects),
        camera1=(scene.camera1.rotation, tuple(float(v) for v in scene.camera1.t)),
        camera2=(scene.camera2.rotation, tuple(float(v) for v in scene.camera2.t)),
        visibility=scene.visibility,
        correspondence=scene.gt_correspondence,
        relative_pose=(q, tuple(float(v) for v in t)),
    )
    return ScenePairFile((tuple(pair.view1), tuple(pair.view2)), pair.distribution, pair.affinity, gt)


# ---------------------------------------------------------------------------
# stitching reports


def report_to_dict(result: StitchResult, w: StitchWeights, wall_clock: float) -> Dict[str, Any]:
    return {
        "version": FORMAT_VERSION,
        "seed": result.seed,
        "wall_clock_s": float(wall_clock),
        "pose": {**pose_to_dict(result.pose), "hypothesis_index": result.hypothesis_index},
        "correspondence": correspondence_to_list(result.correspondence),
        "objective": float(result.objective),
        "terms": {
            "raw": {k: float(v) for k, v in vars(result.terms).items()},
            "weighted": result.terms.weighted(w),
        },
        "weights": dict(vars(w)),
        "sample_index": result.sample_index,
        "n_candidates": result.n_candidates,
        "merged": [object_to_dict(o) for o in result.merged],
    }


@dataclass(frozen=True)
class StitchReport:
    pose: PoseHypothesis
    correspondence: Correspondence
    objective: float
    terms: ObjectiveTerms
    merged: Tuple[SceneObject, ...]
    seed: int
    wall_clock_s: float


def report_from_dict(d) -> StitchReport:
    if not isinstance(d, dict):
        raise ValidationError("<root>", "expected an object")
    raw = _field(_field(d, "terms", ""), "raw", "terms")
    terms = ObjectiveTerms(**{k: _number(_field(raw, k, "terms.raw"), f"terms.raw.{k}")
                              for k in ("l_d", "l_p_rot", "l_p_trans", "l_s", "l_u")})
    return StitchReport(
        pose=pose_from_dict(_field(d, "pose", ""), "pose"),
        correspondence=correspondence_from_list(_field(d, "correspondence", ""), "correspondence"),
        objective=_number(_field(d, "objective", ""), "objective"),
        terms=terms,
        merged=tuple(objects_from_list(_field(d, "merged", ""), "merged")),
        seed=_integer(_field(d, "seed", ""), "seed"),
        wall_clock_s=_number(_field(d, "wall_clock_s", ""), "wall_clock_s"),
    )


# ---------------------------------------------------------------------------
# files


def dumps(d: Dict[str, Any]) -> str:
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(d, sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(str(path), f"cannot read file: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(str(path), f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_scene_pair(path) -> ScenePairFile:
    return scene_pair_from_dict(load_json(path))


def save_json(path, d: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(d))
