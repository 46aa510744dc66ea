"""Point-to-plane ICP with two-closest-neighbour matching and trimmed outlier
rejection, plus the perturbation protocol and error metrics used to score it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import compute_normals
from .core import (
    Array,
    DegenerateGeometryError,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    rotation_angle,
    so3_exp,
)

REFERENCE_NORMAL_K = 20
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 40
    trim_keep_ratio: float = 0.75
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-4
    matches_per_point: int = 2

    def __post_init__(self):
        if not 0.0 < self.trim_keep_ratio <= 1.0:
            raise ValueError("trim_keep_ratio must be in (0, 1]")
        if self.matches_per_point < 1:
            raise ValueError("matches_per_point must be >= 1")


@dataclass
class Correspondences:
    reading: Array
    reference: Array
    sq_distance: Array
    normal: Array

    def __len__(self) -> int:
        return len(self.reading)

    def take(self, idx: Array) -> "Correspondences":
        return Correspondences(self.reading[idx], self.reference[idx], self.sq_distance[idx], self.normal[idx])


@dataclass(frozen=True)
class PerturbationSpec:
    translation_magnitude: float = 0.5
    rotation_magnitude: float = math.radians(20.0)
    seed: int = 0
    per_axis: bool = False

    def __post_init__(self):
        if self.translation_magnitude < 0 or self.rotation_magnitude < 0:
            raise ValueError("perturbation magnitudes must be non-negative")


def _unit_vector(rng: np.random.Generator) -> Array:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def perturbation_delta(spec: PerturbationSpec, rng: np.random.Generator | None = None) -> RigidTransform:
    """Random rigid motion with angle and translation length drawn uniformly
    (or, with ``per_axis``, each axis drawn uniformly in +-magnitude)."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.per_axis:
        omega = rng.uniform(-1, 1, 3) * spec.rotation_magnitude
        t = rng.uniform(-1, 1, 3) * spec.translation_magnitude
        return RigidTransform(so3_exp(omega), t)
    axis = _unit_vector(rng)
    angle = rng.uniform(0.0, spec.rotation_magnitude)
    direction = _unit_vector(rng)
    length = rng.uniform(0.0, spec.translation_magnitude)
    return RigidTransform(so3_exp(axis * angle), direction * length)


def perturb(T_gt: RigidTransform, spec: PerturbationSpec, rng: np.random.Generator | None = None) -> RigidTransform:
    """Initial guess ``exp(s) T_gt`` whose error relative to ``T_gt`` is the drawn motion.

    The twist ``s`` is the drawn motion carried into the world frame by the
    adjoint of ``T_gt``, so ``exp(s) T_gt == T_gt delta``.
    """
    if spec.translation_magnitude == 0 and spec.rotation_magnitude == 0:
        return T_gt
    return T_gt @ perturbation_delta(spec, rng)


def registration_errors(T_est: RigidTransform, T_gt: RigidTransform) -> tuple[float, float]:
    """Translation norm (m) and geodesic rotation angle (rad) of ``T_gt^-1 T_est``."""
    delta = T_gt.inverse() @ T_est
    return float(np.linalg.norm(delta.translation)), rotation_angle(delta.rotation)


def reference_with_normals(reference: PointCloud, index: SpatialIndex | None = None) -> PointCloud:
    index = index or SpatialIndex(reference.points)
    return compute_normals(reference, REFERENCE_NORMAL_K, origin=reference.points.mean(axis=0), index=index)


def match(reading: PointCloud | Array, reference_index: SpatialIndex, reference_normals: Array, m: int = 2) -> Correspondences:
    """The ``m`` nearest reference points of every reading point."""
    if reference_normals is None:
        raise ValueError("reference normals are required for point-to-plane matching")
    pts = reading.points if isinstance(reading, PointCloud) else np.asarray(reading)
    idx, dist = reference_index.query(pts, m)
    m_eff = idx.shape[1]
    read_idx = np.repeat(np.arange(len(pts)), m_eff)
    ref_idx = idx.reshape(-1)
    return Correspondences(read_idx, ref_idx, dist.reshape(-1) ** 2, reference_normals[ref_idx])


def trim_outliers(c: Correspondences, keep_ratio: float) -> Correspondences:
    """Keep the ceil(keep_ratio * n) closest pairs; kept pairs stay in their original order."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep_ratio must be in (0, 1]")
    n_keep = math.ceil(keep_ratio * len(c))
    if n_keep >= len(c):
        return c
    order = np.argsort(c.sq_distance, kind="stable")[:n_keep]
    return c.take(np.sort(order))


def point_to_plane_system(
    c: Correspondences, reading_pts: Array, reference_pts: Array, center: Array | None = None
) -> tuple[Array, Array]:
    """Rows ``[(q - center) x n, n]`` and residuals ``(p - q) . n`` of the linearised problem."""
    q = reading_pts[c.reading]
    p = reference_pts[c.reference]
    n = c.normal
    lever = q if center is None else q - center
    J = np.hstack([np.cross(lever, n), n])
    r = np.einsum("ij,ij->i", p - q, n)
    return J, r


def point_to_plane_step(
    c: Correspondences, reading: PointCloud | Array, reference: PointCloud | Array
) -> RigidTransform:
    """Linearised point-to-plane least squares over the given pairs.

    The rotation is linearised about the centroid of the matched reading
    points, which keeps the step independent of the coordinate frame.
    """
    q = reading.points if isinstance(reading, PointCloud) else np.asarray(reading)
    p = reference.points if isinstance(reference, PointCloud) else np.asarray(reference)
    if len(c) < 6:
        raise DegenerateGeometryError("need at least 6 correspondences")
    center = q[c.reading].mean(axis=0)
    J, r = point_to_plane_system(c, q, p, center)
    A = J.T @ J
    b = J.T @ r
    if np.linalg.cond(A) > MAX_CONDITION:
        raise DegenerateGeometryError("point-to-plane system is rank deficient")
    x = np.linalg.solve(A, b)
    R = so3_exp(x[:3])
    return RigidTransform(R, center + x[3:] - R @ center)


@dataclass
class IcpResult:
    transform: RigidTransform
    iterations: int
    converged: bool
    residual: float
    history: list[float] = field(default_factory=list)


def icp(
    reading: PointCloud,
    reference: PointCloud,
    T_init: RigidTransform | None = None,
    cfg: IcpConfig | None = None,
    reference_index: SpatialIndex | None = None,
) -> IcpResult:
    """Estimate ``T`` with ``reference ~ T(reading)``."""
    cfg = cfg or IcpConfig()
    T = T_init or RigidTransform.identity()
    index = reference_index or SpatialIndex(reference.points)
    if reference.normals is None:
        reference = reference_with_normals(reference, index)
    normals = reference.normals
    residual = float("nan")
    history = []
    for it in range(1, cfg.max_iterations + 1):
        moved = T.apply(reading.points)
        pairs = trim_outliers(match(moved, index, normals, cfg.matches_per_point), cfg.trim_keep_ratio)
        try:
            step = point_to_plane_step(pairs, moved, reference.points)
        except DegenerateGeometryError as err:
            err.last_estimate = T
            raise
        T = step @ T
        _, r = point_to_plane_system(pairs, step.apply(moved), reference.points)
        residual = float(np.sqrt(np.mean(r**2)))
        history.append(residual)
        if (
            np.linalg.norm(step.translation) < cfg.translation_epsilon
            and rotation_angle(step.rotation) < cfg.rotation_epsilon
        ):
            return IcpResult(T, it, True, residual, history)
    return IcpResult(T, cfg.max_iterations, False, residual, history)
