"""Joint search over camera-pose hypotheses and object correspondences, and the
merge of two views into one scene.

The objective for a pose ``P`` and correspondence ``C`` is::

    L_D + lp_rot * (1 - p_rot) + lp_trans * (1 - p_trans) + ls * L_S + lu * L_U

with ``L_D`` the mean chamfer distance between matched objects once view-1
objects are moved by ``P``, ``L_S = sum(1 - A[i, j])`` over matched pairs and
``L_U = min(N, M) - |C|``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import kernels
from .affinity import AffinityMatrix, feasible_pairs
from .geometry import (
    EmptyCloudError,
    GeometryError,
    SceneObject,
    SimilarityTransform,
    chamfer,
    rigid_inverse,
    voxels_to_edge_points,
)
from .pose_space import CameraPoseDistribution, PoseHypothesis, top_k_hypotheses

log = logging.getLogger(__name__)

Pair = Tuple[int, int]


class StitchError(RuntimeError):
    pass


@dataclass(frozen=True)
class Correspondence:
    """Partial one-to-one matching between view-1 and view-2 object indices."""

    pairs: FrozenSet[Pair] = frozenset()

    def __post_init__(self):
        pairs = frozenset((int(i), int(j)) for i, j in self.pairs)
        rows = [i for i, _ in pairs]
        cols = [j for _, j in pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError(f"correspondence is not one-to-one: {sorted(pairs)}")
        if any(i < 0 or j < 0 for i, j in pairs):
            raise ValueError("correspondence indices must be non-negative")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def __contains__(self, pair):
        return tuple(pair) in self.pairs

    def check(self, n: int, m: int) -> None:
        for i, j in self.pairs:
            if i >= n or j >= m:
                raise ValueError(f"pair {(i, j)} out of range for {n}x{m} views")

    def as_matrix(self, n: int, m: int) -> np.ndarray:
        out = np.zeros((n, m), dtype=bool)
        for i, j in self.pairs:
            out[i, j] = True
        return out


@dataclass(frozen=True)
class StitchWeights:
    lambda_s: float = 5.0
    lambda_u: float = 1.0
    lambda_p_rot: float = 5.0
    lambda_p_trans: float = 1.0
    k_samples: int = 128
    affinity_threshold: float = 0.5

    def __post_init__(self):
        for name in ("lambda_s", "lambda_u", "lambda_p_rot", "lambda_p_trans"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.k_samples < 1:
            raise ValueError("k_samples must be at least 1")
        if not 0 < self.affinity_threshold < 1:
            raise ValueError("affinity_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class EdgeParams:
    threshold: float = 0.5
    cell_size: Optional[float] = None
    max_points: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class ObjectiveTerms:
    """Unweighted objective terms; ``l_p_rot = 1 - p_rot`` and ``l_p_trans = 1 - p_trans``."""

    l_d: float
    l_p_rot: float
    l_p_trans: float
    l_s: float
    l_u: float

    def weighted(self, w: StitchWeights) -> Dict[str, float]:
        return {
            "l_d": self.l_d,
            "l_p_rot": w.lambda_p_rot * self.l_p_rot,
            "l_p_trans": w.lambda_p_trans * self.l_p_trans,
            "l_s": w.lambda_s * self.l_s,
            "l_u": w.lambda_u * self.l_u,
        }

    def total(self, w: StitchWeights) -> float:
        return (
            self.l_d
            + w.lambda_p_rot * self.l_p_rot
            + w.lambda_p_trans * self.l_p_trans
            + w.lambda_s * self.l_s
            + w.lambda_u * self.l_u
        )


@dataclass
class StitchResult:
    pose: PoseHypothesis
    correspondence: Correspondence
    merged: List[SceneObject]
    objective: float
    terms: ObjectiveTerms
    seed: int
    hypothesis_index: int = 0
    sample_index: int = 0
    n_candidates: int = 0


# ---------------------------------------------------------------------------
# objective


def edge_cloud(obj: SceneObject, edge: EdgeParams = EdgeParams()) -> np.ndarray:
    """Edge points of ``obj`` placed in its camera frame."""
    local = voxels_to_edge_points(obj.voxels, edge.threshold, edge.cell_size, edge.max_points, edge.seed)
    return obj.transform.apply(local)


def _move(pose: PoseHypothesis, cloud: np.ndarray) -> np.ndarray:
    return pose.transform.apply(cloud)


def _mean_distance(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def stitch_distance(
    view1: Sequence[SceneObject],
    view2: Sequence[SceneObject],
    pose: PoseHypothesis,
    c: Correspondence,
    edge: EdgeParams = EdgeParams(),
) -> float:
    """Mean chamfer distance between matched objects after moving view 1 by ``pose``.

    An empty correspondence has distance 0.
    """
    c.check(len(view1), len(view2))
    values = [
        chamfer(_move(pose, edge_cloud(view1[i], edge)), edge_cloud(view2[j], edge))
        for i, j in c
    ]
    return _mean_distance(values)


def _terms(l_d: float, pose: PoseHypothesis, c: Correspondence, a: AffinityMatrix, n: int, m: int) -> ObjectiveTerms:
    l_s = sum(1.0 - float(a.values[i, j]) for i, j in c)
    return ObjectiveTerms(
        l_d=l_d,
        l_p_rot=1.0 - pose.rotation_prob,
        l_p_trans=1.0 - pose.translation_prob,
        l_s=l_s,
        l_u=float(min(n, m) - len(c)),
    )


def objective(
    view1: Sequence[SceneObject],
    view2: Sequence[SceneObject],
    pose: PoseHypothesis,
    c: Correspondence,
    a: AffinityMatrix,
    w: StitchWeights = StitchWeights(),
    edge: EdgeParams = EdgeParams(),
) -> Tuple[float, ObjectiveTerms]:
    n, m = len(view1), len(view2)
    if a.shape != (n, m):
        raise ValueError(f"affinity shape {a.shape} does not match views ({n}, {m})")
    terms = _terms(stitch_distance(view1, view2, pose, c, edge), pose, c, a, n, m)
    return terms.total(w), terms


# ---------------------------------------------------------------------------
# correspondence proposals


def enumerate_matchings(pairs: Iterable[Pair], limit: Optional[int] = None) -> Optional[List[Correspondence]]:
    """All one-to-one matchings drawn from ``pairs``, larger-first depth-first
    order with the empty matching last. Returns None once more than ``limit``
    matchings exist."""
    by_row: Dict[int, List[int]] = {}
    for i, j in sorted(set(pairs)):
        by_row.setdefault(i, []).append(j)
    rows = sorted(by_row)
    out: List[Correspondence] = []
    chosen: List[Pair] = []
    used: Set[int] = set()

    class _Overflow(Exception):
        pass

    def visit(k):
        if k == len(rows):
            out.append(Correspondence(frozenset(chosen)))
            if limit is not None and len(out) > limit:
                raise _Overflow
            return
        i = rows[k]
        for j in by_row[i]:
            if j not in used:
                used.add(j)
                chosen.append((i, j))
                visit(k + 1)
                chosen.pop()
                used.discard(j)
        visit(k + 1)

    try:
        visit(0)
    except _Overflow:
        return None
    return out


def _sample_matchings(pairs: List[Pair], weights: np.ndarray, k: int, rng: np.random.Generator, n: int, m: int) -> List[Correspondence]:
    # Weighted order without replacement: sort by log(u) / w (Efraimidis-Spirakis).
    # Scanning that order and skipping conflicts draws each next pair with
    # probability proportional to affinity among the non-conflicting ones.
    p = len(pairs)
    u = rng.random((k, p))
    keys = np.log1p(-u) / weights[None, :]
    order = np.argsort(-keys, axis=1, kind="stable")
    accept = rng.random((k, p)) < weights[None, :]
    rows = np.array([i for i, _ in pairs], dtype=np.int64)
    cols = np.array([j for _, j in pairs], dtype=np.int64)
    chosen = kernels.greedy_scan(order, accept, rows, cols, n, m)
    return [Correspondence(frozenset(pairs[t] for t in np.flatnonzero(mask))) for mask in chosen]


def _proposals(
    feasible: Iterable[Pair], a: AffinityMatrix, k: int, rng_for, enumerated: Optional[List[Correspondence]]
) -> List[Correspondence]:
    if enumerated is not None:
        return enumerated
    pairs = sorted(feasible)
    if not pairs:
        return [Correspondence() for _ in range(k)] + [Correspondence()]
    weights = np.array([a.values[i, j] for i, j in pairs], dtype=np.float64)
    return _sample_matchings(pairs, weights, k, rng_for(), a.n, a.m) + [Correspondence()]


def sample_correspondences(feasible: Iterable[Pair], a: AffinityMatrix, k: int, seed: int = 0) -> List[Correspondence]:
    """Randomized greedy matchings over the feasible pairs, plus the empty matching.

    Each sample walks the feasible pairs in an affinity-weighted random order,
    skipping pairs that conflict with those already taken; a non-conflicting
    pair is kept with probability equal to its affinity and otherwise dropped
    for that sample, so partial matchings are reachable. The returned list has
    ``k`` samples followed by the empty correspondence. When the feasible pairs
    admit at most ``k + 1`` matchings in total, every one of them is returned
    instead (no duplicates, empty last).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    feasible = sorted(set(feasible))
    enumerated = enumerate_matchings(feasible, limit=k + 1) if feasible else None
    return _proposals(feasible, a, k, lambda: np.random.default_rng(seed), enumerated)


# ---------------------------------------------------------------------------
# search


class _Problem:
    """Edge clouds and per-hypothesis chamfer caches for one stitching instance."""

    def __init__(self, view1, view2, a, w, edge):
        self.view1, self.view2, self.a, self.w, self.edge = view1, view2, a, w, edge
        self.n, self.m = len(view1), len(view2)
        self.edges1 = [self._edges(o) for o in view1]
        self.edges2 = [self._edges(o) for o in view2]
        self.boxes2 = [None if e is None else (e.min(axis=0), e.max(axis=0)) for e in self.edges2]

    def _edges(self, obj):
        try:
            return edge_cloud(obj, self.edge)
        except EmptyCloudError as exc:
            log.warning("object %s has no edge points: %s", obj.id, exc)
            return None

    def evaluate_hypothesis(self, h: int, pose: PoseHypothesis, proposals: List[Correspondence], bound: float = np.inf):
        """Best ``(total, sample, correspondence, terms)`` for one hypothesis.

        Candidates whose lower bound exceeds the best total seen so far (or
        ``bound``) by more than a relative 1e-9 are skipped without computing
        their chamfer distances; they can never win, so the argmin is the same
        as a full evaluation.
        """
        moved: Dict[int, np.ndarray] = {}
        boxes1: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        dist: Dict[Pair, float] = {}
        low: Dict[Pair, float] = {}
        seen: Set[FrozenSet[Pair]] = set()
        best = None
        n_ok = 0
        w = self.w
        pose_cost = w.lambda_p_rot * (1.0 - pose.rotation_prob) + w.lambda_p_trans * (1.0 - pose.translation_prob)

        def moved_cloud(i):
            if i not in moved:
                moved[i] = _move(pose, self.edges1[i])
                boxes1[i] = (moved[i].min(axis=0), moved[i].max(axis=0))
            return moved[i]

        for s, c in enumerate(proposals):
            if c.pairs in seen:
                continue
            seen.add(c.pairs)
            bad = [(i, j) for i, j in c if self.edges1[i] is None or self.edges2[j] is None]
            if bad:
                log.debug("hypothesis %d sample %d skipped: pair %s has a degenerate voxel grid", h, s, bad[0])
                continue
            n_ok += 1
            limit = bound if best is None else min(bound, best[0])
            rest = pose_cost + w.lambda_s * sum(1.0 - float(self.a.values[i, j]) for i, j in c) \
                + w.lambda_u * float(min(self.n, self.m) - len(c))
            if _beyond(rest, limit):
                continue
            if c.pairs and np.isfinite(limit):
                lbs = []
                for i, j in c:
                    if (i, j) not in dist and (i, j) not in low:
                        moved_cloud(i)
                        low[(i, j)] = _chamfer_lower_bound(moved[i], boxes1[i], self.edges2[j], self.boxes2[j])
                    lbs.append(dist.get((i, j), low.get((i, j))))
                if _beyond(rest + _mean_distance(lbs), limit):
                    continue
            values = []
            for i, j in c:
                d = dist.get((i, j))
                if d is None:
                    d = dist[(i, j)] = chamfer(moved_cloud(i), self.edges2[j])
                values.append(d)
            terms = _terms(_mean_distance(values), pose, c, self.a, self.n, self.m)
            total = terms.total(w)
            if best is None or total < best[0]:
                best = (total, s, c, terms)
        return best, n_ok


def _beyond(value: float, limit: float) -> bool:
    return value > limit + 1e-9 * (1.0 + abs(limit))


def _chamfer_lower_bound(x: np.ndarray, box_x, y: np.ndarray, box_y) -> float:
    """Chamfer lower bound from each cloud's distance to the other's bounding box."""

    def gap(points, box):
        lo, hi = box
        g = np.maximum(np.maximum(lo - points, points - hi), 0.0)
        return float(np.mean(np.einsum("ij,ij->i", g, g)))

    return gap(x, box_y) + gap(y, box_x)


def solve(
    view1: Sequence[SceneObject],
    view2: Sequence[SceneObject],
    a: AffinityMatrix,
    dist: CameraPoseDistribution,
    w: StitchWeights = StitchWeights(),
    k_rot: int = 3,
    k_trans: int = 10,
    seed: int = 0,
    edge: EdgeParams = EdgeParams(),
    workers: int = 1,
    hypotheses: Optional[List[PoseHypothesis]] = None,
) -> StitchResult:
    """Pick the pose hypothesis and correspondence with the lowest objective.

    Every hypothesis among the top ``k_rot x k_trans`` is scored against its own
    set of ``w.k_samples`` correspondence proposals (seeded from ``(seed,
    hypothesis index)``) plus the empty correspondence. When the feasible pairs
    admit at most ``k_samples + 1`` matchings the proposals are the full
    enumeration instead. Ties go to the earlier hypothesis, then the earlier
    proposal. ``hypotheses`` overrides the top-k enumeration.
    """
    if not view1 or not view2:
        raise StitchError("both views need at least one object")
    if a.shape != (len(view1), len(view2)):
        raise StitchError(f"affinity shape {a.shape} does not match views ({len(view1)}, {len(view2)})")
    if hypotheses is None:
        hypotheses = top_k_hypotheses(dist, min(k_rot, len(dist.rotation_bins)), min(k_trans, len(dist.translation_bins)))
    problem = _Problem(view1, view2, a, w, edge)
    feasible = sorted(feasible_pairs(a, w.affinity_threshold))
    enumerated = enumerate_matchings(feasible, limit=w.k_samples + 1) if feasible else None

    def run(h, bound=np.inf):
        rng_for = lambda: np.random.default_rng(np.random.SeedSequence([seed, h]))  # noqa: E731
        proposals = _proposals(feasible, a, w.k_samples, rng_for, enumerated)
        return problem.evaluate_hypothesis(h, hypotheses[h], proposals, bound)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(hypotheses))))
    else:
        # sequential runs share the running best as a pruning bound
        results = []
        bound = np.inf
        for h in range(len(hypotheses)):
            res, n_ok = run(h, bound)
            results.append((res, n_ok))
            if res is not None:
                bound = min(bound, res[0])

    best = None
    n_total = 0
    for h, (res, n_ok) in enumerate(results):
        n_total += n_ok
        if res is not None and (best is None or res[0] < best[1][0]):
            best = (h, res)
    if best is None:
        raise StitchError("every candidate evaluation failed")
    h, (total, s, c, terms) = best
    pose = hypotheses[h]
    return StitchResult(
        pose=pose,
        correspondence=c,
        merged=merge(view1, view2, pose, c, seed),
        objective=total,
        terms=terms,
        seed=seed,
        hypothesis_index=h,
        sample_index=s,
        n_candidates=n_total,
    )


# ---------------------------------------------------------------------------
# merge


def to_view1(obj: SceneObject, pose: PoseHypothesis) -> SceneObject:
    """Express a view-2 object in the view-1 frame through the inverse pose."""
    inv_r, inv_t = rigid_inverse(pose.rotation, pose.translation)
    t = obj.transform
    moved = SimilarityTransform(inv_r * t.rotation, inv_r.rotate(t.t)[0] + inv_t, t.scale)
    return SceneObject(obj.id, obj.voxels, moved, obj.score, obj.embedding, obj.category)


def merge(
    view1: Sequence[SceneObject],
    view2: Sequence[SceneObject],
    pose: PoseHypothesis,
    c: Correspondence,
    seed: int = 0,
) -> List[SceneObject]:
    """Union of both views in the view-1 frame, with matched pairs fused.

    A fused object averages translation and per-axis scale, takes its rotation
    and its voxel grid each from one of the two objects chosen at random, and
    keeps the higher score. Output order: view-1 objects (fused where matched),
    then unmatched view-2 objects.
    """
    c.check(len(view1), len(view2))
    rng = np.random.default_rng(seed)
    partner = dict(c.pairs)
    out = []
    for i, a in enumerate(view1):
        if i not in partner:
            out.append(a)
            continue
        b = to_view1(view2[partner[i]], pose)
        ta, tb = a.transform, b.transform
        rot_src = (a, b)[int(rng.integers(2))]
        shape_src = (a, b)[int(rng.integers(2))]
        fused = SimilarityTransform(
            rot_src.transform.rotation,
            (ta.t + tb.t) / 2.0,
            (ta.s + tb.s) / 2.0,
        )
        out.append(
            SceneObject(
                id=f"{a.id}+{b.id}",
                voxels=shape_src.voxels,
                transform=fused,
                score=max(a.score, b.score),
                embedding=shape_src.embedding if shape_src.embedding is not None else (a.embedding or b.embedding),
                category=a.category if a.category is not None else b.category,
            )
        )
    matched2 = set(partner.values())
    out.extend(to_view1(o, pose) for j, o in enumerate(view2) if j not in matched2)
    return out
