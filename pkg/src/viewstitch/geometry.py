"""Rotations, similarity transforms, voxel grids and the point-cloud distances built on them.

Point clouds are plain ``(n, 3)`` float arrays. Every type here is immutable once
constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import kernels

Vec3 = Tuple[float, float, float]


class GeometryError(ValueError):
    pass


class EmptyCloudError(GeometryError):
    pass


class NonRepresentableError(GeometryError):
    """Raised when an affine map has no (rotation, translation, per-axis scale) factorization."""


def _vec3(values, name="vector") -> Vec3:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"{name} must have 3 components, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError(f"{name} must be finite")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


def as_cloud(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"point cloud must have shape (n, 3), got {pts.shape}")
    return pts


def _nonempty(points, name) -> np.ndarray:
    pts = as_cloud(points)
    if pts.shape[0] == 0:
        raise EmptyCloudError(f"{name} is empty")
    return pts


# ---------------------------------------------------------------------------
# rotations


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation as a unit quaternion ``w + xi + yj + zk``.

    The constructor normalizes its input and fixes the sign so that ``w >= 0``
    (for ``w == 0`` the first nonzero vector component is positive). ``q`` and
    ``-q`` therefore construct equal objects.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        v = np.array([self.w, self.x, self.y, self.z], dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise GeometryError("quaternion components must be finite")
        norm = float(np.sqrt(np.dot(v, v)))
        if norm < 1e-12:
            raise GeometryError("zero quaternion does not represent a rotation")
        v /= norm
        if v[0] < 0 or (v[0] == 0 and v[np.flatnonzero(v[1:])[0] + 1] < 0):
            v = -v
        for name, val in zip("wxyz", v):
            object.__setattr__(self, name, float(val) + 0.0)

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_wxyz(cls, values: Sequence[float]) -> "UnitQuaternion":
        values = [float(v) for v in values]
        if len(values) != 4:
            raise GeometryError(f"quaternion needs 4 components, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0:
            return cls.identity()
        axis = axis / n
        half = 0.5 * angle
        s = math.sin(half)
        return cls(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_rotvec(cls, rotvec) -> "UnitQuaternion":
        rotvec = np.asarray(rotvec, dtype=np.float64)
        return cls.from_axis_angle(rotvec, float(np.linalg.norm(rotvec)))

    @classmethod
    def from_matrix(cls, m) -> "UnitQuaternion":
        m = np.asarray(m, dtype=np.float64)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        # branch on the largest diagonal term for stability
        if tr > 0:
            s = 2.0 * math.sqrt(tr + 1.0)
            return cls(0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            return cls((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        if m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            return cls((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        return cls((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_rotvec(self) -> np.ndarray:
        v = np.array([self.x, self.y, self.z])
        s = float(np.linalg.norm(v))
        if s < 1e-15:
            return 2.0 * v
        angle = 2.0 * math.atan2(s, self.w)
        return v * (angle / s)

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate

    def __mul__(self, other: "UnitQuaternion") -> "UnitQuaternion":
        if not isinstance(other, UnitQuaternion):
            return NotImplemented
        a1, b1, c1, d1 = self.w, self.x, self.y, self.z
        a2, b2, c2, d2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        )

    def rotate(self, points) -> np.ndarray:
        return as_cloud(points) @ self.as_matrix().T


def rotation_geodesic(r1: UnitQuaternion, r2: UnitQuaternion) -> float:
    """Angle in radians, in ``[0, pi]``, of the rotation taking ``r1`` to ``r2``."""
    if r1 == r2:
        return 0.0
    rel = r1.conjugate() * r2
    s = math.sqrt(rel.x * rel.x + rel.y * rel.y + rel.z * rel.z)
    return 2.0 * math.atan2(s, abs(rel.w))


# ---------------------------------------------------------------------------
# transforms


@dataclass(frozen=True)
class SimilarityTransform:
    """Maps local points ``p`` to ``rotation(scale * p) + translation``."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: Vec3 = (0.0, 0.0, 0.0)
    scale: Vec3 = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not isinstance(self.rotation, UnitQuaternion):
            raise GeometryError("rotation must be a UnitQuaternion")
        object.__setattr__(self, "translation", _vec3(self.translation, "translation"))
        scale = _vec3(self.scale, "scale")
        if min(scale) <= 0:
            raise GeometryError(f"scale components must be positive, got {scale}")
        object.__setattr__(self, "scale", scale)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def s(self) -> np.ndarray:
        return np.array(self.scale)

    def linear(self) -> np.ndarray:
        return self.rotation.as_matrix() * self.s[None, :]

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.linear()
        m[:3, 3] = self.t
        return m

    def apply(self, points) -> np.ndarray:
        pts = as_cloud(points)
        return (pts * self.s) @ self.rotation.as_matrix().T + self.t

    def to_affine(self) -> "AffineMap":
        return AffineMap(self.linear(), self.t)


def apply_transform(t, points) -> np.ndarray:
    """Apply a :class:`SimilarityTransform` or :class:`AffineMap` to a cloud."""
    return t.apply(points)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """General ``x -> linear @ x + offset`` operator.

    Compositions and inverses of anisotropically scaled transforms are not
    similarity transforms in general, so they live here. :meth:`as_similarity`
    recovers the factored form when one exists.
    """

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(3, 3)
        off = np.array(self.offset, dtype=np.float64).reshape(3)
        lin.flags.writeable = False
        off.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    def apply(self, points) -> np.ndarray:
        return as_cloud(points) @ self.linear.T + self.offset

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.linear
        m[:3, 3] = self.offset
        return m

    def to_affine(self) -> "AffineMap":
        return self

    def as_similarity(self, tol: float = 1e-9) -> SimilarityTransform:
        """Factor as rotation * diag(scale) + translation, or raise NonRepresentableError."""
        scale = np.linalg.norm(self.linear, axis=0)
        if np.any(scale <= tol):
            raise NonRepresentableError("linear part is singular")
        rot = self.linear / scale[None, :]
        if np.abs(rot.T @ rot - np.eye(3)).max() > tol or np.linalg.det(rot) <= 0:
            raise NonRepresentableError(
                "linear part is not a rotation times a positive diagonal scale"
            )
        return SimilarityTransform(UnitQuaternion.from_matrix(rot), tuple(self.offset), tuple(scale))


def compose(outer, inner) -> AffineMap:
    """Operator with ``compose(a, b).apply(p) == a.apply(b.apply(p))``."""
    a, b = outer.to_affine(), inner.to_affine()
    return AffineMap(a.linear @ b.linear, a.linear @ b.offset + a.offset)


def inverse(t) -> AffineMap:
    a = t.to_affine()
    inv = np.linalg.inv(a.linear)
    return AffineMap(inv, -inv @ a.offset)


def rigid_inverse(rotation: UnitQuaternion, translation) -> Tuple[UnitQuaternion, np.ndarray]:
    """Inverse of the rigid map ``x -> R x + t`` as ``(R^-1, -R^-1 t)``."""
    inv = rotation.conjugate()
    return inv, -inv.rotate(np.asarray(translation, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# voxels


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Cubic occupancy grid; flat index is ``x * R**2 + y * R + z``."""

    resolution: int
    occupancy: np.ndarray

    def __post_init__(self):
        r = int(self.resolution)
        if r < 1:
            raise GeometryError("voxel resolution must be positive")
        occ = np.array(self.occupancy, dtype=np.float64).reshape(-1)
        if occ.size != r ** 3:
            raise GeometryError(f"occupancy has {occ.size} cells, expected {r ** 3}")
        if occ.size and (occ.min() < 0 or occ.max() > 1):
            raise GeometryError("occupancy values must lie in [0, 1]")
        occ.flags.writeable = False
        object.__setattr__(self, "resolution", r)
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def from_dense(cls, dense) -> "VoxelGrid":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 3 or len(set(dense.shape)) != 1:
            raise GeometryError(f"dense grid must be cubic, got {dense.shape}")
        return cls(dense.shape[0], dense.reshape(-1))

    def dense(self) -> np.ndarray:
        r = self.resolution
        return self.occupancy.reshape(r, r, r)

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.occupancy, other.occupancy)

    __hash__ = None


def voxels_to_edge_points(
    v: VoxelGrid,
    threshold: float = 0.5,
    cell_size: Optional[float] = None,
    max_points: int = 1000,
    seed: int = 0,
) -> np.ndarray:
    """Centers of the boundary cells of the thresholded grid.

    A cell is on the boundary when it is occupied and at least one of its six
    face neighbours is empty or outside the grid. Coordinates are
    ``(index + 0.5 - R/2) * cell_size``; ``cell_size`` defaults to ``1/R`` so the
    grid spans the unit cube centred on the origin. Clouds larger than
    ``max_points`` are subsampled without replacement by a generator seeded with
    ``seed``, keeping the original cell order.
    """
    if not 0 < threshold < 1:
        raise GeometryError("threshold must lie in (0, 1)")
    if max_points < 1:
        raise GeometryError("max_points must be at least 1")
    r = v.resolution
    if cell_size is None:
        cell_size = 1.0 / r
    occ = v.dense() >= threshold
    if not occ.any():
        raise EmptyCloudError("voxel grid has no cell at or above the threshold")
    padded = np.pad(occ, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1, 1:-1]
        & padded[2:, 1:-1, 1:-1]
        & padded[1:-1, :-2, 1:-1]
        & padded[1:-1, 2:, 1:-1]
        & padded[1:-1, 1:-1, :-2]
        & padded[1:-1, 1:-1, 2:]
    )
    idx = np.argwhere(occ & ~interior)
    if idx.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        idx = idx[np.sort(rng.choice(idx.shape[0], size=max_points, replace=False))]
    return (idx + 0.5 - r / 2.0) * cell_size


# ---------------------------------------------------------------------------
# distances


def chamfer(x, y) -> float:
    """Mean nearest squared distance from x to y plus the same from y to x."""
    x = _nonempty(x, "x")
    y = _nonempty(y, "y")
    return float(kernels.nearest_sqdist(x, y).mean() + kernels.nearest_sqdist(y, x).mean())


def scale_error(s, s_hat) -> float:
    s = np.asarray(_vec3(s, "scale"))
    s_hat = np.asarray(_vec3(s_hat, "scale"))
    if s.min() <= 0 or s_hat.min() <= 0:
        raise GeometryError("scale_error needs positive scales")
    return float(np.mean(np.abs(np.log2(s) - np.log2(s_hat))))


def fscore(x, y, tau: float) -> float:
    """F-score of point proximity at distance ``tau`` (inclusive)."""
    if tau <= 0:
        raise GeometryError("tau must be positive")
    x = _nonempty(x, "x")
    y = _nonempty(y, "y")
    tau2 = tau * tau
    precision = float(np.mean(kernels.nearest_sqdist(x, y) <= tau2))
    recall = float(np.mean(kernels.nearest_sqdist(y, x) <= tau2))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# scene objects


@dataclass(frozen=True)
class SceneObject:
    """One detected object: shape, placement, confidence and matching embedding."""

    id: str
    voxels: VoxelGrid
    transform: SimilarityTransform
    score: float = 1.0
    embedding: Optional[Tuple[float, ...]] = None
    category: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.score <= 1:
            raise GeometryError(f"score must lie in [0, 1], got {self.score}")
        if self.embedding is not None:
            emb = tuple(float(e) for e in self.embedding)
            if abs(math.sqrt(sum(e * e for e in emb)) - 1.0) > 1e-6:
                raise GeometryError(f"embedding of object {self.id!r} is not unit norm")
            object.__setattr__(self, "embedding", emb)
