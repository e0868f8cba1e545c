"""Independent reference implementations used to check the package.

None of these call into the code they check beyond plain data accessors.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree


def pr_curve_ap(scores: Sequence[float], labels: Sequence[bool], num_positive: int) -> float:
    """All-point interpolated AP from an explicit precision-recall curve.

    Ranks by descending score with ties in input order, lists the (recall,
    precision) point after every prediction, interpolates precision at each
    point as the best precision at any recall at least as large, and sums
    recall increments times interpolated precision.
    """
    ranked = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    points = []
    tp = 0
    for rank, k in enumerate(ranked, start=1):
        tp += bool(labels[k])
        points.append((tp / num_positive, tp / rank))
    ap = 0.0
    prev_recall = 0.0
    for idx, (recall, _) in enumerate(points):
        if recall > prev_recall:
            interp = max(p for r, p in points[idx:] if r >= recall)
            ap += (recall - prev_recall) * interp
            prev_recall = recall
    return ap


def fixture_ap_exact() -> Fraction:
    """Three predictions (TP 0.9, FP 0.8, TP 0.7) against two ground-truth objects.

    Points: (r=1/2, p=1), (1/2, 1/2), (1, 2/3). Interpolated precision is 1 at
    recall 1/2 and 2/3 at recall 1, so AP = 1/2 * 1 + 1/2 * 2/3.
    """
    return Fraction(1, 2) * 1 + Fraction(1, 2) * Fraction(2, 3)


def kd_chamfer(x: np.ndarray, y: np.ndarray) -> float:
    dx, _ = cKDTree(y).query(x)
    dy, _ = cKDTree(x).query(y)
    return float(np.mean(dx ** 2) + np.mean(dy ** 2))


def _quat_matrix(wxyz) -> np.ndarray:
    w, x, y, z = wxyz
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _placed(local: np.ndarray, rot_wxyz, t, s) -> np.ndarray:
    return (local * np.asarray(s)) @ _quat_matrix(rot_wxyz).T + np.asarray(t)


def all_matchings(n: int, m: int) -> List[Tuple[Tuple[int, int], ...]]:
    """Every one-to-one partial matching between ``range(n)`` and ``range(m)``."""
    out = []
    for size in range(min(n, m) + 1):
        for rows in itertools.combinations(range(n), size):
            for cols in itertools.permutations(range(m), size):
                out.append(tuple(zip(rows, cols)))
    return out


def exhaustive_minimum(view1, view2, affinity: np.ndarray, hypotheses, local_clouds1, local_clouds2,
                       weights: Dict[str, float], pairs_allowed=None) -> float:
    """Brute-force minimum of the stitching objective.

    ``local_clouds`` are per-object edge clouds in object coordinates; placement
    and the camera move are recomputed here from raw quaternions. Objects are
    read through ``transform.rotation.as_array()``, ``transform.t`` and
    ``transform.s`` only.
    """
    n, m = len(view1), len(view2)
    placed2 = [_placed(c, o.transform.rotation.as_array(), o.transform.t, o.transform.s)
               for c, o in zip(local_clouds2, view2)]
    best = math.inf
    for h in hypotheses:
        rp = _quat_matrix(h.rotation.as_array())
        tp = np.asarray(h.translation)
        moved1 = [_placed(c, o.transform.rotation.as_array(), o.transform.t, o.transform.s) @ rp.T + tp
                  for c, o in zip(local_clouds1, view1)]
        cham = {(i, j): kd_chamfer(moved1[i], placed2[j]) for i in range(n) for j in range(m)}
        pose_cost = weights["lambda_p_rot"] * (1 - h.rotation_prob) + weights["lambda_p_trans"] * (1 - h.translation_prob)
        for match in all_matchings(n, m):
            if pairs_allowed is not None and not set(match) <= pairs_allowed:
                continue
            l_d = sum(cham[p] for p in match) / len(match) if match else 0.0
            l_s = sum(1 - affinity[i, j] for i, j in match)
            l_u = min(n, m) - len(match)
            best = min(best, l_d + pose_cost + weights["lambda_s"] * l_s + weights["lambda_u"] * l_u)
    return best
