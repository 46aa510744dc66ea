"""Closed-form k-NN tensor voting.

The first pass encodes every voter as a unit ball; the second pass re-encodes
voters with their ball component removed and reads surface/curve/junction
saliencies off the accumulated tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Array,
    InsufficientPointsError,
    Label,
    PointCloud,
    SpatialIndex,
    SpectralDecomp,
    eigendecompose_sym3,
)

_CHUNK = 4096


class DegeneratePairError(ValueError):
    pass


@dataclass(frozen=True)
class VoteConfig:
    sigma: float = 0.2
    k: int = 50

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.k < 4:
            raise ValueError("k must be >= 4")


@dataclass
class Neighborhoods:
    """k-NN lists with the query point itself removed.

    ``valid`` masks out coincident (zero-distance) neighbours, which cannot vote.
    """

    indices: Array
    distances: Array
    valid: Array

    @property
    def duplicate_count(self) -> int:
        return int(np.count_nonzero(~self.valid))


@dataclass
class VoteField:
    """Accumulated, k-normalised tensors for every point of a cloud."""

    tensors: Array
    neighborhoods: Neighborhoods
    k: int
    diagnostics: dict = field(default_factory=dict)

    def decompose(self) -> SpectralDecomp:
        return eigendecompose_sym3(self.tensors)


@dataclass
class SaliencyField:
    surfaceness: Array
    curveness: Array
    pointness: Array
    directions: Array  # (n, 3, 3), column d is e_{d+1}
    eigenvalues: Array

    def stacked(self) -> Array:
        return np.stack([self.surfaceness, self.curveness, self.pointness], axis=1)

    def labels(self) -> Array:
        # argmax returns the first maximum, which gives Surface > Curve > Junction on ties
        return np.argmax(self.stacked(), axis=1).astype(np.int8)

    def __len__(self) -> int:
        return len(self.surfaceness)


def cftv_vote(x_i: Array, x_j: Array, K_j: Array, sigma: float) -> Array:
    """Single closed-form vote cast by ``x_j`` (tensor ``K_j``) onto ``x_i``."""
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    diff = x_i - x_j
    dist = np.linalg.norm(diff)
    if dist == 0.0:
        raise DegeneratePairError("vote between coincident points is undefined")
    r = diff / dist
    c = np.exp(-dist**2 / sigma)
    return c * _vote_tensor(r[None, :], np.asarray(K_j, dtype=np.float64)[None])[0]


def _vote_tensor(r: Array, K: Array) -> Array:
    """Symmetric part of ``R K (I - rr^T/2) R`` for unit ``r`` (..., 3) and ``K`` (..., 3, 3).

    With ``R = I - 2 rr^T`` the symmetric part is ``R X R`` where
    ``X = K - (K r r^T + r r^T K) / 4``.
    """
    u = np.einsum("...ij,...j->...i", K, r)
    X = K - 0.25 * (u[..., :, None] * r[..., None, :] + r[..., :, None] * u[..., None, :])
    w = np.einsum("...ij,...j->...i", X, r)
    s = np.einsum("...i,...i->...", r, w)
    rr = r[..., :, None] * r[..., None, :]
    return (
        X
        - 2.0 * (r[..., :, None] * w[..., None, :] + w[..., :, None] * r[..., None, :])
        + 4.0 * s[..., None, None] * rr
    )


def neighborhoods(points: Array, k: int, index: SpatialIndex | None = None) -> Neighborhoods:
    """k nearest neighbours of every point, excluding the point itself."""
    n = len(points)
    if n < k + 1:
        raise InsufficientPointsError(f"need more than k={k} points, got {n}")
    index = index or SpatialIndex(points)
    idx, dist = index.query(points, k + 1)
    own = idx == np.arange(n)[:, None]
    # rows where the point itself fell outside the k+1 list (many duplicates): drop the last slot
    missing = ~own.any(axis=1)
    own[missing, -1] = True
    keep = ~own
    idx = idx[keep].reshape(n, k)
    dist = dist[keep].reshape(n, k)
    return Neighborhoods(idx, dist, dist > 0.0)


def _accumulate(points: Array, nb: Neighborhoods, sigma: float, k: int, voters: Array | None) -> Array:
    n = len(points)
    out = np.empty((n, 3, 3))
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        idx = nb.indices[sl]
        dist = nb.distances[sl]
        valid = nb.valid[sl]
        diff = points[sl, None, :] - points[idx]
        safe = np.where(valid, dist, 1.0)
        r = diff / safe[..., None]
        c = np.where(valid, np.exp(-(dist**2) / sigma), 0.0)
        if voters is None:
            # unit ball voter: vote is c (I - rr^T / 2)
            rr = np.einsum("mk,mki,mkj->mij", c, r, r)
            out[sl] = c.sum(axis=1)[:, None, None] * np.eye(3) - 0.5 * rr
        else:
            votes = _vote_tensor(r, voters[idx])
            out[sl] = np.einsum("mk,mkij->mij", c, votes)
    return out / k


def first_pass(
    cloud: PointCloud | Array,
    cfg: VoteConfig,
    index: SpatialIndex | None = None,
    nb: Neighborhoods | None = None,
) -> VoteField:
    """Unit-ball voting. Eigenvalues of every returned tensor lie in [0, 1]."""
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if nb is None:
        nb = neighborhoods(points, cfg.k, index)
    tensors = _accumulate(points, nb, cfg.sigma, cfg.k, None)
    return VoteField(tensors, nb, cfg.k, {"duplicates": nb.duplicate_count})


def remove_ball(tensors: Array) -> Array:
    """Re-encode tensors as ``(l1 - l2) S + (l2 - l3) P``, i.e. ``K - l3 I``."""
    dec = eigendecompose_sym3(tensors)
    lam3 = dec.values[..., 2]
    return tensors - lam3[..., None, None] * np.eye(3)


def second_pass(
    cloud: PointCloud | Array,
    tensors: Array | VoteField,
    cfg: VoteConfig,
    index: SpatialIndex | None = None,
) -> SaliencyField:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    nb = None
    if isinstance(tensors, VoteField):
        nb = tensors.neighborhoods
        tensors = tensors.tensors
    tensors = np.asarray(tensors, dtype=np.float64)
    if tensors.shape != (len(points), 3, 3):
        raise ValueError(
            f"expected {len(points)} tensors of shape (3, 3), got {tensors.shape}"
        )
    if nb is None:
        nb = neighborhoods(points, cfg.k, index)
    voters = remove_ball(tensors)
    accumulated = _accumulate(points, nb, cfg.sigma, cfg.k, voters)
    return saliency_field(eigendecompose_sym3(accumulated))


def saliency_field(dec: SpectralDecomp) -> SaliencyField:
    # symmetrised non-ball votes can leave tiny negative eigenvalues; project onto the PSD cone
    lam = np.clip(dec.values, 0.0, None)
    return SaliencyField(
        surfaceness=lam[:, 0] - lam[:, 1],
        curveness=lam[:, 1] - lam[:, 2],
        pointness=lam[:, 2],
        directions=dec.vectors,
        eigenvalues=lam,
    )


def interpret(dec: SpectralDecomp) -> tuple[float, float, float, Label]:
    """Saliencies ``(surface, curve, point)`` and dominant label for one eigensystem."""
    l1, l2, l3 = (float(v) for v in dec.values)
    sal = (l1 - l2, l2 - l3, l3)
    return sal[0], sal[1], sal[2], Label(int(np.argmax(sal)))
