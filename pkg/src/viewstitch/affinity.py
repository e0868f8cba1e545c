"""Cross-view object affinity from unit embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, Iterable, Set, Tuple

import numpy as np
from scipy.special import expit

DEFAULT_K = 5.0
DEFAULT_THRESHOLD = 0.5

Pair = Tuple[int, int]


class AffinityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    """``values[i, j]`` scores view-1 object ``i`` against view-2 object ``j``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise AffinityError(f"affinity must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1 or not np.all(np.isfinite(v))):
            raise AffinityError("affinity values must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def __getitem__(self, ij):
        return self.values[ij]


@dataclass(frozen=True)
class AffinityLabels:
    positives: FrozenSet[Pair]
    negatives: FrozenSet[Pair]

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "negatives", frozenset(self.negatives))
        if self.positives & self.negatives:
            raise AffinityError("positive and negative label sets overlap")

    @classmethod
    def from_positives(cls, positives: Iterable[Pair], n: int, m: int) -> "AffinityLabels":
        pos = frozenset((int(i), int(j)) for i, j in positives)
        neg = frozenset((i, j) for i in range(n) for j in range(m)) - pos
        return cls(pos, neg)


def _unit_rows(e, name) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 1:
        e = e.reshape(0, 0) if e.size == 0 else e.reshape(1, -1)
    if e.ndim != 2:
        raise AffinityError(f"{name} must be a list of vectors")
    if e.shape[0]:
        bad = np.flatnonzero(np.abs(np.linalg.norm(e, axis=1) - 1.0) > 1e-6)
        if bad.size:
            raise AffinityError(f"{name}[{bad[0]}] is not unit norm")
    return e


def build_affinity(e1, e2, k: float = DEFAULT_K) -> AffinityMatrix:
    """``A[i, j] = sigmoid(k * <e1[i], e2[j]>)``."""
    a = _unit_rows(e1, "e1")
    b = _unit_rows(e2, "e2")
    if a.shape[0] and b.shape[0] and a.shape[1] != b.shape[1]:
        raise AffinityError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        return AffinityMatrix(np.zeros((a.shape[0], b.shape[0])))
    # elementwise products keep A(e1, e2) exactly equal to A(e2, e1).T
    dots = (a[:, None, :] * b[None, :, :]).sum(axis=2)
    return AffinityMatrix(expit(k * dots))


def balanced_affinity_loss(a: AffinityMatrix, labels: AffinityLabels) -> float:
    """Class-balanced squared error: mean over positives (target 1) plus mean over
    negatives (target 0). An empty class contributes 0."""
    n, m = a.shape
    for i, j in labels.positives | labels.negatives:
        if not (0 <= i < n and 0 <= j < m):
            raise AffinityError(f"label pair {(i, j)} outside matrix of shape {a.shape}")
    if len(labels.positives) + len(labels.negatives) != n * m:
        raise AffinityError("labels do not cover the affinity matrix")
    loss = 0.0
    if labels.positives:
        idx = tuple(np.array(sorted(labels.positives)).T)
        loss += float(np.mean((a.values[idx] - 1.0) ** 2))
    if labels.negatives:
        idx = tuple(np.array(sorted(labels.negatives)).T)
        loss += float(np.mean(a.values[idx] ** 2))
    return loss


def feasible_pairs(a: AffinityMatrix, threshold: float = DEFAULT_THRESHOLD) -> Set[Pair]:
    """Pairs with affinity strictly above ``threshold``."""
    if not 0 < threshold < 1:
        raise AffinityError("threshold must lie in (0, 1)")
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(a.values > threshold))}
