"""Geometric primitives shared by every stage: clouds, symmetric 3x3 eigensystems,
k-NN indexing and rigid transforms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

Array = np.ndarray

NORMAL_TOL = 1e-9


class Label(enum.IntEnum):
    SURFACE = 0
    CURVE = 1
    JUNCTION = 2


class EmptyInputError(ValueError):
    pass


class InsufficientPointsError(ValueError):
    pass


class DegenerateGeometryError(RuntimeError):
    """Raised when a least-squares system is rank deficient."""

    def __init__(self, message: str, last_estimate: "RigidTransform | None" = None):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass
class PointCloud:
    """Ordered ``(n, 3)`` positions plus optional per-point channels.

    Known channels: ``normal`` (n, 3), ``saliency`` (n, 3), ``label`` (n,),
    ``confidence`` (n,). Arbitrary extra channels are allowed.
    """

    points: Array
    channels: dict[str, Array] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points = pts
        channels = {}
        for name, values in self.channels.items():
            values = np.asarray(values)
            if len(values) != len(pts):
                raise ValueError(
                    f"channel {name!r} has length {len(values)}, expected {len(pts)}"
                )
            channels[name] = values
        if "normal" in channels:
            normals = channels["normal"].astype(np.float64)
            norms = np.linalg.norm(normals, axis=1)
            if np.any(np.abs(norms - 1.0) > NORMAL_TOL):
                raise ValueError("normal channel entries must have unit norm")
            channels["normal"] = normals
        self.channels = channels

    def __len__(self) -> int:
        return len(self.points)

    @property
    def normals(self) -> Array | None:
        return self.channels.get("normal")

    def subset(self, indices: Array) -> "PointCloud":
        indices = np.asarray(indices)
        return PointCloud(
            self.points[indices],
            {name: values[indices] for name, values in self.channels.items()},
        )

    def with_channels(self, **channels: Array) -> "PointCloud":
        merged = dict(self.channels)
        merged.update(channels)
        return PointCloud(self.points, merged)

    def transformed(self, transform: "RigidTransform") -> "PointCloud":
        channels = dict(self.channels)
        if "normal" in channels:
            normals = channels["normal"] @ transform.rotation.T
            channels["normal"] = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(transform.apply(self.points), channels)


# --------------------------------------------------------------------------
# symmetric 3x3 tensors


def sym_from_entries(xx, xy, xz, yy, yz, zz) -> Array:
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]], dtype=np.float64)


@dataclass
class SpectralDecomp:
    """Eigenvalues in descending order; ``vectors[..., :, d]`` pairs with ``values[..., d]``."""

    values: Array
    vectors: Array

    def reconstruct(self) -> Array:
        return np.einsum("...id,...d,...jd->...ij", self.vectors, self.values, self.vectors)


def _canonical_signs(vectors: Array, tol: float = 1e-12) -> Array:
    # flip each column so its first component with |v| > tol is positive
    significant = np.abs(vectors) > tol
    first = np.argmax(significant, axis=-2)
    lead = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    signs = np.where(lead < 0, -1.0, 1.0)
    return vectors * signs


def eigendecompose_sym3(tensor: Array) -> SpectralDecomp:
    """Ordered eigensystem of one symmetric 3x3 tensor or a stack ``(..., 3, 3)``.

    Eigenvalues are returned in descending order. Each eigenvector's first
    significant component is made positive so results are reproducible.
    """
    t = np.asarray(tensor, dtype=np.float64)
    if t.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) tensor, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor entries must be finite")
    t = 0.5 * (t + np.swapaxes(t, -1, -2))
    values, vectors = np.linalg.eigh(t)
    values = values[..., ::-1]
    vectors = vectors[..., :, ::-1]
    return SpectralDecomp(values.copy(), _canonical_signs(vectors))


# --------------------------------------------------------------------------
# spatial index


class SpatialIndex:
    """Exact k-NN / radius queries on an immutable point set.

    Ties in distance are broken by ascending point index.
    """

    def __init__(self, points: Array | PointCloud):
        if isinstance(points, PointCloud):
            points = points.points
        points = np.asarray(points, dtype=np.float64)
        if len(points) == 0:
            raise EmptyInputError("cannot index an empty cloud")
        self.points = points
        self.points.setflags(write=False)
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: Array, k: int) -> tuple[Array, Array]:
        """Batched k-NN. Returns ``(indices, distances)``, both ``(m, min(k, n))``."""
        if k < 1:
            raise ValueError("k must be >= 1")
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        n = len(self.points)
        kk = min(k, n)
        if kk == n:
            return self._exhaustive(queries, kk)
        # one extra neighbour tells whether a tie straddles the k-th slot
        dist, idx = self._tree.query(queries, k=kk + 1)
        dist = np.atleast_2d(dist)
        idx = np.atleast_2d(idx)
        # recompute distances directly so ties compare exactly
        dist = np.linalg.norm(self.points[idx] - queries[:, None, :], axis=-1)
        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=-1)
        dist = np.take_along_axis(dist, order, axis=-1)
        straddle = np.nonzero(dist[:, kk] <= dist[:, kk - 1])[0]
        for row in straddle:
            idx[row, :kk], dist[row, :kk] = self._ball_resolve(queries[row], dist[row, kk - 1], kk)
        return idx[:, :kk], dist[:, :kk]

    def knn(self, query: Array, k: int) -> list[tuple[int, float]]:
        idx, dist = self.query(np.asarray(query, dtype=np.float64)[None, :], k)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]

    def radius(self, query: Array, r: float) -> list[int]:
        found = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return sorted(found)

    def _ball_resolve(self, q: Array, radius: float, k: int) -> tuple[Array, Array]:
        cand = np.array(self._tree.query_ball_point(q, radius * (1 + 1e-12) + 1e-300))
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        order = np.lexsort((cand, d))[:k]
        return cand[order], d[order]

    def _exhaustive(self, queries: Array, k: int) -> tuple[Array, Array]:
        out_idx = np.empty((len(queries), k), dtype=np.intp)
        out_dist = np.empty((len(queries), k))
        base = np.arange(len(self.points))
        for start in range(0, len(queries), 1024):
            q = queries[start : start + 1024]
            d = np.linalg.norm(self.points[None, :, :] - q[:, None, :], axis=-1)
            order = np.lexsort((np.broadcast_to(base, d.shape), d), axis=-1)[:, :k]
            out_idx[start : start + len(q)] = order
            out_dist[start : start + len(q)] = np.take_along_axis(d, order, axis=-1)
        return out_idx, out_dist


def build_index(cloud: PointCloud | Array) -> SpatialIndex:
    return SpatialIndex(cloud)


def knn(index: SpatialIndex, query: Array, k: int) -> list[tuple[int, float]]:
    return index.knn(query, k)


# --------------------------------------------------------------------------
# rotations and rigid transforms


def skew(v: Array) -> Array:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega: Array) -> Array:
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        # second-order series; orthonormalised below
        R = np.eye(3) + K + 0.5 * K @ K
        u, _, vt = np.linalg.svd(R)
        return u @ vt
    return (
        np.eye(3)
        + np.sin(theta) / theta * K
        + (1.0 - np.cos(theta)) / theta**2 * (K @ K)
    )


def rotation_angle(R: Array) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    # arccos loses precision near 0 and pi; atan2 of (|skew part|, trace part) does not
    s = np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    c = (np.trace(R) - 1.0) / 2.0
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


@dataclass(frozen=True)
class RigidTransform:
    rotation: Array = field(default_factory=lambda: np.eye(3))
    translation: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, matrix: Array) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, omega: Array, translation: Array = (0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(so3_exp(omega), np.asarray(translation, dtype=np.float64))

    def matrix(self) -> Array:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: Array) -> Array:
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )
