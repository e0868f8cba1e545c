"""Scene-level metrics: 3D detection AP under joint per-object error thresholds,
correspondence AP, and relative camera pose error statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .affinity import AffinityMatrix
from .geometry import (
    SceneObject,
    UnitQuaternion,
    fscore,
    rotation_geodesic,
    scale_error,
    voxels_to_edge_points,
)
from .pose_space import PoseHypothesis
from .stitcher import Correspondence

METRICS = ("shape", "trans", "rot", "scale")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionThresholds:
    trans_max: float = 1.0
    scale_max: float = 0.2
    rot_max: float = math.pi / 6
    fscore_min: float = 0.25
    fscore_tau: float = 0.05

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise EvaluationError(f"threshold {k} must be positive")


@dataclass(frozen=True)
class DetectionRecord:
    confidence: float
    trans: bool = False
    scale: bool = False
    rot: bool = False
    shape: bool = False
    gt_index: Optional[int] = None

    @property
    def is_true_positive(self) -> bool:
        return self.trans and self.scale and self.rot and self.shape

    def passes(self, require: Optional[Iterable[str]] = None) -> bool:
        if require is None:
            return self.is_true_positive
        return all(getattr(self, name) for name in require)


def _shape_cloud(obj: SceneObject, cache: dict) -> np.ndarray:
    key = id(obj.voxels)
    if key not in cache:
        cache[key] = (obj.voxels, voxels_to_edge_points(obj.voxels))
    return cache[key][1]


def match_and_score(
    predictions: Sequence[SceneObject],
    ground_truth: Sequence[SceneObject],
    th: DetectionThresholds = DetectionThresholds(),
) -> List[DetectionRecord]:
    """Greedy detection matching, most confident prediction first.

    Each prediction takes the nearest (by translation) ground-truth object not
    yet claimed, restricted to the same category when both carry one. Records
    come back in ranking order; predictions left without a partner are false
    positives with every flag down.
    """
    order = sorted(range(len(predictions)), key=lambda k: -predictions[k].score)
    gt_t = np.array([g.transform.t for g in ground_truth]).reshape(-1, 3)
    claimed = np.zeros(len(ground_truth), dtype=bool)
    cache: dict = {}
    records = []
    for k in order:
        p = predictions[k]
        ok = ~claimed
        if p.category is not None:
            ok &= np.array([g.category is None or g.category == p.category for g in ground_truth], dtype=bool)
        if not ok.any():
            records.append(DetectionRecord(p.score))
            continue
        d = np.linalg.norm(gt_t - p.transform.t, axis=1)
        d[~ok] = np.inf
        g_idx = int(np.argmin(d))
        claimed[g_idx] = True
        g = ground_truth[g_idx]
        f = fscore(_shape_cloud(p, cache), _shape_cloud(g, cache), th.fscore_tau)
        records.append(
            DetectionRecord(
                confidence=p.score,
                trans=bool(d[g_idx] < th.trans_max),
                scale=scale_error(p.transform.scale, g.transform.scale) < th.scale_max,
                rot=rotation_geodesic(p.transform.rotation, g.transform.rotation) < th.rot_max,
                shape=f >= th.fscore_min,
                gt_index=g_idx,
            )
        )
    return records


def ranked_ap(scores, labels, num_positive: int) -> float:
    """All-point interpolated AP for a ranking by descending score.

    Ties keep input order. Precision is replaced by its running maximum from the
    right before the area under the curve is summed at each recall step.
    """
    if num_positive < 1:
        raise EvaluationError("average precision needs at least one positive")
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape != labels.shape:
        raise EvaluationError("scores and labels differ in length")
    if scores.size == 0:
        return 0.0
    hits = labels[np.argsort(-scores, kind="stable")]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(envelope[hits]) / num_positive)


def average_precision(
    records: Sequence[DetectionRecord], num_ground_truth: int, require: Optional[Iterable[str]] = None
) -> float:
    """Detection AP; ``require`` limits the true-positive test to some of the flags."""
    if num_ground_truth < 1:
        raise EvaluationError("num_ground_truth must be at least 1")
    require = None if require is None else tuple(require)
    return ranked_ap(
        [r.confidence for r in records],
        [r.passes(require) for r in records],
        num_ground_truth,
    )


def detection_aps(records: Sequence[DetectionRecord], num_ground_truth: int) -> Dict[str, float]:
    out = {"all": average_precision(records, num_ground_truth)}
    for name in METRICS:
        out[name] = average_precision(records, num_ground_truth, require=(name,))
    return out


def correspondence_confidence(a: AffinityMatrix, predicted: Correspondence) -> np.ndarray:
    """Affinity kept for predicted pairs and halved for all others."""
    predicted.check(a.n, a.m)
    gamma = np.where(predicted.as_matrix(a.n, a.m), 1.0, 0.5)
    return gamma * a.values


def correspondence_ap(confidences, gt: Correspondence) -> float:
    """AP over all N*M pairs, ties in row-major order."""
    conf = np.asarray(confidences, dtype=np.float64)
    gt.check(*conf.shape)
    if len(gt) == 0:
        raise EvaluationError("correspondence AP is undefined without positive pairs")
    return ranked_ap(conf.reshape(-1), gt.as_matrix(*conf.shape).reshape(-1), len(gt))


def pooled_correspondence_ap(items: Iterable[Tuple[np.ndarray, Correspondence]]) -> float:
    """Correspondence AP with the pairs of many scene pairs ranked together."""
    scores, labels, total = [], [], 0
    for conf, gt in items:
        conf = np.asarray(conf, dtype=np.float64)
        gt.check(*conf.shape)
        scores.append(conf.reshape(-1))
        labels.append(gt.as_matrix(*conf.shape).reshape(-1))
        total += len(gt)
    if total == 0:
        raise EvaluationError("correspondence AP is undefined without positive pairs")
    return ranked_ap(np.concatenate(scores), np.concatenate(labels), total)


@dataclass(frozen=True)
class PoseErrorSummary:
    """Relative-pose error table row; rotations in degrees, fractions in percent."""

    count: int
    trans_median: float
    trans_mean: float
    trans_within: float
    rot_median: float
    rot_mean: float
    rot_within: float
    trans_threshold: float = 1.0
    rot_threshold_deg: float = 30.0

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def relative_pose_stats(
    predicted: Sequence[PoseHypothesis],
    gt: Sequence[Tuple[UnitQuaternion, Sequence[float]]],
    trans_threshold: float = 1.0,
    rot_threshold_deg: float = 30.0,
) -> PoseErrorSummary:
    if len(predicted) != len(gt):
        raise EvaluationError(f"{len(predicted)} predictions for {len(gt)} ground-truth poses")
    if not predicted:
        raise EvaluationError("relative_pose_stats needs at least one pose")
    t_err = np.array(
        [np.linalg.norm(np.asarray(p.translation) - np.asarray(t, dtype=np.float64)) for p, (_, t) in zip(predicted, gt)]
    )
    r_err = np.degrees([rotation_geodesic(p.rotation, q) for p, (q, _) in zip(predicted, gt)])
    return PoseErrorSummary(
        count=len(predicted),
        trans_median=float(np.median(t_err)),
        trans_mean=float(np.mean(t_err)),
        trans_within=float(100.0 * np.mean(t_err <= trans_threshold)),
        rot_median=float(np.median(r_err)),
        rot_mean=float(np.mean(r_err)),
        rot_within=float(100.0 * np.mean(r_err <= rot_threshold_deg)),
        trans_threshold=trans_threshold,
        rot_threshold_deg=rot_threshold_deg,
    )


@dataclass
class EvaluationReport:
    detection_ap: Dict[str, float]
    num_ground_truth: int
    num_predictions: int
    correspondence_ap: Optional[float] = None
    pose: Optional[PoseErrorSummary] = None

    def as_dict(self) -> dict:
        return {
            "detection_ap": dict(self.detection_ap),
            "num_ground_truth": self.num_ground_truth,
            "num_predictions": self.num_predictions,
            "correspondence_ap": self.correspondence_ap,
            "pose": None if self.pose is None else self.pose.as_dict(),
        }

    def to_text(self) -> str:
        """Plain-text tables carrying the same numbers as ``as_dict`` to 6 decimals."""
        ap = self.detection_ap
        keys = ("all",) + METRICS
        lines = [
            "Detection AP",
            "  " + " ".join(f"{k:>9}" for k in keys),
            "  " + " ".join(f"{ap[k]:9.6f}" for k in keys),
            f"  predictions={self.num_predictions} ground_truth={self.num_ground_truth}",
        ]
        if self.correspondence_ap is not None:
            lines += ["Correspondence AP", f"  {self.correspondence_ap:9.6f}"]
        if self.pose is not None:
            p = self.pose
            lines += [
                f"Relative pose (n={p.count})",
                f"  {'':5} {'Median':>11} {'Mean':>11} {'Within%':>11}  threshold",
                f"  {'trans':5} {p.trans_median:11.6f} {p.trans_mean:11.6f} {p.trans_within:11.6f}  {p.trans_threshold:g} m",
                f"  {'rot':5} {p.rot_median:11.6f} {p.rot_mean:11.6f} {p.rot_within:11.6f}  {p.rot_threshold_deg:g} deg",
            ]
        return "\n".join(lines)


def evaluate_scenes(
    scenes: Iterable[dict],
    th: DetectionThresholds = DetectionThresholds(),
) -> EvaluationReport:
    """Aggregate metrics over scene pairs.

    Each scene is a dict with ``predictions`` and ``ground_truth`` object lists
    and, optionally, ``affinity`` with ``predicted_correspondence`` and
    ``gt_correspondence``, and ``pose`` with ``gt_pose``. Detection records and
    correspondence pairs are pooled across scenes before ranking.
    """
    records: List[DetectionRecord] = []
    n_gt = n_pred = 0
    corr_items = []
    poses, gt_poses = [], []
    for scene in scenes:
        records.extend(match_and_score(scene["predictions"], scene["ground_truth"], th))
        n_gt += len(scene["ground_truth"])
        n_pred += len(scene["predictions"])
        if scene.get("affinity") is not None and scene.get("gt_correspondence") is not None:
            conf = correspondence_confidence(scene["affinity"], scene["predicted_correspondence"])
            corr_items.append((conf, scene["gt_correspondence"]))
        if scene.get("pose") is not None and scene.get("gt_pose") is not None:
            poses.append(scene["pose"])
            gt_poses.append(scene["gt_pose"])
    if n_gt == 0:
        raise EvaluationError("ground truth is empty")
    corr_ap = None
    if corr_items and sum(len(g) for _, g in corr_items) > 0:
        corr_ap = pooled_correspondence_ap(corr_items)
    return EvaluationReport(
        detection_ap=detection_aps(records, n_gt),
        num_ground_truth=n_gt,
        num_predictions=n_pred,
        correspondence_ap=corr_ap,
        pose=relative_pose_stats(poses, gt_poses) if poses else None,
    )
