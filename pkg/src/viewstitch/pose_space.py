"""Binned relative-pose representation: clustering pose corpora into bins and
enumerating the most likely (rotation, translation) bin pairs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import SimilarityTransform, UnitQuaternion


class PoseSpaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TranslationBinSet:
    centroids: np.ndarray

    def __post_init__(self):
        c = np.array(self.centroids, dtype=np.float64).reshape(-1, 3)
        if c.shape[0] < 1:
            raise PoseSpaceError("translation bin set needs at least one centroid")
        if np.unique(c, axis=0).shape[0] != c.shape[0]:
            raise PoseSpaceError("translation centroids must be pairwise distinct")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    def __len__(self):
        return self.centroids.shape[0]

    def nearest(self, t) -> int:
        d = np.sum((self.centroids - np.asarray(t, dtype=np.float64)) ** 2, axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True, eq=False)
class RotationBinSet:
    centroids: Tuple[UnitQuaternion, ...]

    def __post_init__(self):
        cs = tuple(c if isinstance(c, UnitQuaternion) else UnitQuaternion.from_wxyz(c) for c in self.centroids)
        if not cs:
            raise PoseSpaceError("rotation bin set needs at least one centroid")
        object.__setattr__(self, "centroids", cs)

    def __len__(self):
        return len(self.centroids)

    def as_array(self) -> np.ndarray:
        return np.array([c.as_array() for c in self.centroids])

    def nearest(self, q: UnitQuaternion) -> int:
        return int(np.argmax(np.abs(self.as_array() @ q.as_array())))


def _as_probs(p, n, name) -> np.ndarray:
    p = np.array(p, dtype=np.float64).reshape(-1)
    if p.shape[0] != n:
        raise PoseSpaceError(f"{name} has {p.shape[0]} entries for {n} bins")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise PoseSpaceError(f"{name} must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise PoseSpaceError(f"{name} sums to {p.sum():.9g}, not 1")
    p = p / p.sum()
    p.flags.writeable = False
    return p


@dataclass(frozen=True, eq=False)
class CameraPoseDistribution:
    """Independent multinomials over rotation bins and translation bins.

    Probability vectors are checked to sum to 1 within 1e-6 and then
    renormalized.
    """

    rotation_bins: RotationBinSet
    translation_bins: TranslationBinSet
    rotation_probs: np.ndarray
    translation_probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "rotation_probs", _as_probs(self.rotation_probs, len(self.rotation_bins), "rotation_probs")
        )
        object.__setattr__(
            self,
            "translation_probs",
            _as_probs(self.translation_probs, len(self.translation_bins), "translation_probs"),
        )


@dataclass(frozen=True)
class PoseHypothesis:
    """A candidate relative pose mapping view-1 camera coordinates into view-2 camera coordinates."""

    rotation: UnitQuaternion
    translation: Tuple[float, float, float]
    rotation_prob: float = 1.0
    translation_prob: float = 1.0
    rotation_bin: int = -1
    translation_bin: int = -1

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        for name in ("rotation_prob", "translation_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise PoseSpaceError(f"{name} must lie in [0, 1]")

    @property
    def transform(self) -> SimilarityTransform:
        return SimilarityTransform(self.rotation, self.translation)


def top_k_hypotheses(dist: CameraPoseDistribution, k_rot: int, k_trans: int) -> List[PoseHypothesis]:
    """Cartesian product of the ``k_rot`` most likely rotation bins and ``k_trans``
    most likely translation bins, most probable pair first.

    Ties are broken by rotation bin index, then translation bin index.
    """
    if not 1 <= k_rot <= len(dist.rotation_bins):
        raise PoseSpaceError(f"k_rot={k_rot} outside [1, {len(dist.rotation_bins)}]")
    if not 1 <= k_trans <= len(dist.translation_bins):
        raise PoseSpaceError(f"k_trans={k_trans} outside [1, {len(dist.translation_bins)}]")
    rot_idx = np.argsort(-dist.rotation_probs, kind="stable")[:k_rot]
    trans_idx = np.argsort(-dist.translation_probs, kind="stable")[:k_trans]
    pairs = [(int(r), int(t)) for r in rot_idx for t in trans_idx]
    pairs.sort(key=lambda rt: (-(dist.rotation_probs[rt[0]] * dist.translation_probs[rt[1]]), rt[0], rt[1]))
    return [
        PoseHypothesis(
            rotation=dist.rotation_bins.centroids[r],
            translation=tuple(dist.translation_bins.centroids[t]),
            rotation_prob=float(dist.rotation_probs[r]),
            translation_prob=float(dist.translation_probs[t]),
            rotation_bin=r,
            translation_bin=t,
        )
        for r, t in pairs
    ]


# ---------------------------------------------------------------------------
# clustering


@dataclass
class ClusterResult:
    centroids: np.ndarray
    labels: np.ndarray
    costs: List[float] = field(default_factory=list)
    n_iter: int = 0


def _chunked(fn, data, workers):
    # fixed chunk boundaries keep results identical for any worker count
    bounds = list(range(0, data.shape[0], 512)) + [data.shape[0]]
    chunks = [data[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if workers <= 1 or len(chunks) == 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _n_distinct(x: np.ndarray) -> int:
    return np.unique(x, axis=0).shape[0]


def kmeans(samples, k: int, seed: int = 0, max_iter: int = 100, workers: int = 1) -> ClusterResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``costs[t]`` is the total squared distance after the t-th assignment step.
    Stops when assignments stop changing or after ``max_iter`` updates. A
    cluster that loses all members is moved onto the sample farthest from its
    assigned centroid.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise PoseSpaceError("samples must be a 2-D array")
    n = x.shape[0]
    if k < 1 or k > n:
        raise PoseSpaceError(f"k={k} must lie in [1, {n}] (number of samples)")
    if _n_distinct(x) < k:
        raise PoseSpaceError(f"only {_n_distinct(x)} distinct samples for k={k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        centers[c] = x[rng.choice(n, p=d2 / d2.sum())]
        d2 = np.minimum(d2, np.sum((x - centers[c]) ** 2, axis=1))

    def assign(chunk):
        d = np.sum((chunk[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        lab = np.argmin(d, axis=1)
        return lab, d[np.arange(chunk.shape[0]), lab]

    labels, dist = _chunked(assign, x, workers)
    costs = [float(dist.sum())]
    it = 0
    while it < max_iter:
        it += 1
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(dist))
                centers[c] = x[far]
                dist[far] = 0.0
        new_labels, dist = _chunked(assign, x, workers)
        costs.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ClusterResult(centers.copy(), labels, costs, it)


def kmeans_translations(samples, k: int = 60, seed: int = 0, max_iter: int = 100, workers: int = 1) -> TranslationBinSet:
    return TranslationBinSet(kmeans(samples, k, seed, max_iter, workers).centroids)


def _canonical(q: np.ndarray) -> np.ndarray:
    return np.array([UnitQuaternion.from_wxyz(row).as_array() for row in q])


def spherical_kmeans(samples, k: int, seed: int = 0, max_iter: int = 100, workers: int = 1) -> ClusterResult:
    """Spherical k-means for unit quaternions under the double cover.

    Similarity is ``|<q, c>|`` so ``q`` and ``-q`` always land in the same
    cluster. A centroid is the normalized mean of its members after flipping
    each member onto the centroid's hemisphere. When that mean vanishes, or the
    cluster is empty, the centroid is re-seeded from the sample least similar
    to its own centroid. ``costs`` tracks ``sum(1 - |<q, c>|)``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 4:
        raise PoseSpaceError("rotation samples must have shape (n, 4)")
    x = _canonical(x)
    n = x.shape[0]
    if k < 1 or k > n:
        raise PoseSpaceError(f"k={k} must lie in [1, {n}] (number of samples)")
    if _n_distinct(x) < k:
        raise PoseSpaceError(f"only {_n_distinct(x)} distinct rotations for k={k}")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, 4))
    centers[0] = x[rng.integers(n)]
    d = 1.0 - np.abs(x @ centers[0])
    for c in range(1, k):
        w = np.clip(d, 0.0, None)
        centers[c] = x[rng.choice(n, p=w / w.sum())] if w.sum() > 0 else x[int(np.argmax(d))]
        d = np.minimum(d, 1.0 - np.abs(x @ centers[c]))

    def assign(chunk):
        sim = np.abs(chunk @ centers.T)
        lab = np.argmax(sim, axis=1)
        return lab, 1.0 - sim[np.arange(chunk.shape[0]), lab]

    labels, dist = _chunked(assign, x, workers)
    costs = [float(dist.sum())]
    it = 0
    while it < max_iter:
        it += 1
        for c in range(k):
            members = x[labels == c]
            mean = np.zeros(4)
            if members.shape[0]:
                signs = np.where(members @ centers[c] < 0, -1.0, 1.0)
                mean = (members * signs[:, None]).sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm < 1e-12:
                far = int(np.argmax(dist))
                centers[c] = x[far]
                dist[far] = 0.0
            else:
                centers[c] = UnitQuaternion.from_wxyz(mean / norm).as_array()
        new_labels, dist = _chunked(assign, x, workers)
        costs.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ClusterResult(centers.copy(), labels, costs, it)


def spherical_kmeans_rotations(
    samples: Sequence, k: int = 30, seed: int = 0, max_iter: int = 100, workers: int = 1
) -> RotationBinSet:
    arr = np.array([s.as_array() if isinstance(s, UnitQuaternion) else s for s in samples], dtype=np.float64)
    res = spherical_kmeans(arr, k, seed, max_iter, workers)
    return RotationBinSet(tuple(UnitQuaternion.from_wxyz(c) for c in res.centroids))
