"""Comparison subsampling filters: random, voxel, octree, max density,
surface-normal sampling, normal-space sampling and covariance sampling."""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import Array, InsufficientPointsError, PointCloud, SpatialIndex, eigendecompose_sym3

OCTREE_MAX_DEPTH = 21
SSNORMAL_FALLBACK_K = 10


class Method(str, enum.Enum):
    RANDOM = "random"
    VOXEL = "voxel"
    OCTREE = "octree"
    MAX_DENSITY = "max_density"
    SSNORMAL = "ssnormal"
    NSS = "nss"
    COVS = "covs"


@dataclass
class FilterSpec:
    method: Method
    parameter: float
    seed: int = 0

    def __post_init__(self):
        self.method = Method(self.method)

    def apply(self, cloud: PointCloud) -> PointCloud:
        p = self.parameter
        if self.method is Method.RANDOM:
            return random_sample(cloud, p, self.seed)
        if self.method is Method.VOXEL:
            return voxel_sample(cloud, p)
        if self.method is Method.OCTREE:
            return octree_sample(cloud, int(round(p)))
        if self.method is Method.MAX_DENSITY:
            return max_density_sample(cloud, p, self.seed)
        if self.method is Method.SSNORMAL:
            return sampling_surface_normal(cloud, int(round(p)))
        if self.method is Method.NSS:
            return normal_space_sample(cloud, int(round(p)), self.seed)
        return covariance_sample(cloud, int(round(p)), seed=self.seed)


# --------------------------------------------------------------------------
# normals


def compute_normals(
    cloud: PointCloud,
    k: int = 10,
    origin: Array = (0.0, 0.0, 0.0),
    index: SpatialIndex | None = None,
) -> PointCloud:
    """Attach PCA normals from k-NN covariances, oriented toward ``origin``."""
    n = len(cloud)
    if k < 3 or n <= k:
        raise InsufficientPointsError(f"normal estimation needs more than k={k} >= 3 points, got {n}")
    pts = cloud.points
    index = index or SpatialIndex(pts)
    idx, _ = index.query(pts, k)
    normals = np.empty((n, 3))
    for start in range(0, n, 16384):
        nb = pts[idx[start : start + 16384]]
        centered = nb - nb.mean(axis=1, keepdims=True)
        cov = np.einsum("mki,mkj->mij", centered, centered)
        normals[start : start + 16384] = eigendecompose_sym3(cov).vectors[:, :, 2]
    normals = orient_toward(normals, pts, origin)
    return cloud.with_channels(normal=normals / np.linalg.norm(normals, axis=1, keepdims=True))


def orient_toward(normals: Array, points: Array, origin: Array) -> Array:
    flip = np.einsum("ij,ij->i", normals, np.asarray(origin, dtype=np.float64) - points) < 0
    normals = normals.copy()
    normals[flip] *= -1.0
    return normals


def _ensure_normals(cloud: PointCloud, k: int = 10) -> PointCloud:
    return cloud if cloud.normals is not None else compute_normals(cloud, k)


# --------------------------------------------------------------------------
# random / density


def random_sample(cloud: PointCloud, p: float, seed: int = 0) -> PointCloud:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {p}")
    if p == 1.0:
        return cloud
    keep = np.random.default_rng(seed).random(len(cloud)) < p
    return cloud.subset(np.nonzero(keep)[0])


def local_density(cloud: PointCloud, k: int = 10) -> Array:
    """Spherical k-NN density estimate in points per cubic metre."""
    idx, dist = SpatialIndex(cloud.points).query(cloud.points, k + 1)
    r = dist[:, k]
    return k / (4.0 / 3.0 * np.pi * np.maximum(r, 1e-12) ** 3)


def max_density_sample(cloud: PointCloud, max_density: float, seed: int = 0, k: int = 10) -> PointCloud:
    if not max_density > 0:
        raise ValueError("max_density must be positive")
    density = local_density(cloud, k)
    keep_prob = np.minimum(1.0, max_density / density)
    u = np.random.default_rng(seed).random(len(cloud))
    return cloud.subset(np.nonzero(u < keep_prob)[0])


# --------------------------------------------------------------------------
# centroid filters


def centroid_cloud(cloud: PointCloud, groups: Array, n_groups: int, carry: tuple[str, ...] = ()) -> PointCloud:
    """One centroid per group; scalar channels named in ``carry`` are averaged."""
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    sums = np.stack([np.bincount(groups, cloud.points[:, d], n_groups) for d in range(3)], axis=1)
    channels = {
        name: np.bincount(groups, cloud.channels[name].astype(np.float64), n_groups) / counts
        for name in carry
        if name in cloud.channels
    }
    return PointCloud(sums / counts[:, None], channels)


def voxel_sample(cloud: PointCloud, cell_size: float) -> PointCloud:
    """Replace each occupied grid cell (anchored at the cloud's min corner) by its centroid."""
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    cells = np.floor((cloud.points - cloud.points.min(axis=0)) / cell_size).astype(np.int64)
    _, groups = np.unique(cells, axis=0, return_inverse=True)
    groups = groups.reshape(-1)
    return centroid_cloud(cloud, groups, int(groups.max()) + 1)


def _morton_codes(points: Array) -> tuple[Array, Array, float]:
    lo = points.min(axis=0)
    extent = float((points.max(axis=0) - lo).max())
    scale = (1 << OCTREE_MAX_DEPTH) / extent if extent > 0 else 0.0
    q = np.minimum(((points - lo) * scale).astype(np.uint64), (1 << OCTREE_MAX_DEPTH) - 1)
    code = np.zeros(len(points), dtype=np.uint64)
    for bit in range(OCTREE_MAX_DEPTH):
        for axis in range(3):
            code |= ((q[:, axis] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(3 * bit + (2 - axis))
    return code, lo, extent


def octree_leaves(points: Array, max_points_per_cell: int) -> list[Array]:
    """Index sets of the leaves of a capacity-bounded octree over ``points``.

    Each leaf holds at most ``max_points_per_cell`` points unless the depth cap
    is reached. Leaves are listed in Morton order.
    """
    if max_points_per_cell < 1:
        raise ValueError("max_points_per_cell must be >= 1")
    code, _, _ = _morton_codes(points)
    order = np.argsort(code, kind="stable")
    sorted_code = code[order]
    leaves = []
    stack = [(0, 0, len(points))]
    while stack:
        depth, lo, hi = stack.pop()
        if hi - lo <= max_points_per_cell or depth == OCTREE_MAX_DEPTH:
            leaves.append((lo, hi))
            continue
        stack.extend(reversed(_children(sorted_code, depth, lo, hi)))
    leaves.sort()
    return [np.sort(order[lo:hi]) for lo, hi in leaves]


def _children(sorted_code: Array, depth: int, lo: int, hi: int) -> list[tuple[int, int, int]]:
    shift = np.uint64(3 * (OCTREE_MAX_DEPTH - depth - 1))
    digits = (sorted_code[lo:hi] >> shift) & np.uint64(7)
    bounds = np.searchsorted(digits, np.arange(9, dtype=np.uint64))
    return [
        (depth + 1, lo + int(a), lo + int(b))
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]


def octree_sample(cloud: PointCloud, max_points_per_cell: int) -> PointCloud:
    leaves = octree_leaves(cloud.points, max_points_per_cell)
    groups = np.empty(len(cloud), dtype=np.intp)
    for g, leaf in enumerate(leaves):
        groups[leaf] = g
    return centroid_cloud(cloud, groups, len(leaves))


def octree_sample_count(cloud: PointCloud, target: int, carry: tuple[str, ...] = ()) -> PointCloud:
    groups, n_groups = octree_partition_count(cloud.points, target)
    return centroid_cloud(cloud, groups, n_groups, carry)


def octree_partition_count(points: Array, target: int) -> tuple[Array, int]:
    """Partition ``points`` into exactly ``target`` octree cells (fewer only if
    duplicates make that impossible).

    Leaves are split most-populated first, which passes through the same
    partitions as the capacity-bounded octree at every capacity. The final
    split merges its smallest children so the leaf count lands on ``target``.
    """
    n = len(points)
    if not 1 <= target <= n:
        raise ValueError(f"target must be in [1, {n}], got {target}")
    code, _, _ = _morton_codes(points)
    order = np.argsort(code, kind="stable")
    sorted_code = code[order]
    # heap of (-count, lo, depth, hi); lo keeps ties deterministic
    heap = [(-n, 0, 0, n)]
    final: list[tuple[int, int]] = []
    merged: list[list[tuple[int, int]]] = []
    count = 1
    while count < target and heap:
        neg, lo, depth, hi = heapq.heappop(heap)
        if depth == OCTREE_MAX_DEPTH or hi - lo == 1:
            final.append((lo, hi))
            continue
        kids = _children(sorted_code, depth, lo, hi)
        room = target - count + 1
        if len(kids) > room:
            # keep the largest room-1 children, fuse the rest into one group
            kids.sort(key=lambda c: (-(c[2] - c[1]), c[1]))
            keep, rest = kids[: room - 1], kids[room - 1 :]
            for d, a, b in keep:
                final.append((a, b))
            merged.append([(a, b) for _, a, b in rest])
            count = target
            break
        count += len(kids) - 1
        for d, a, b in kids:
            heapq.heappush(heap, (-(b - a), a, d, b))
    groups = np.empty(n, dtype=np.intp)
    cell_ranges = final + [(lo, hi) for _, lo, _, hi in heap]
    g = 0
    for lo, hi in sorted(cell_ranges):
        groups[order[lo:hi]] = g
        g += 1
    for parts in merged:
        for lo, hi in parts:
            groups[order[lo:hi]] = g
        g += 1
    return groups, g


def sampling_surface_normal(cloud: PointCloud, neighbors_to_merge: int) -> PointCloud:
    """Median-split the cloud along its longest axis until every bin holds at most
    ``neighbors_to_merge`` points; each bin becomes its centroid with a PCA normal."""
    if neighbors_to_merge < 3:
        raise ValueError("neighbors_to_merge must be >= 3")
    pts = cloud.points
    bins = []
    stack = [np.arange(len(pts))]
    while stack:
        idx = stack.pop()
        if len(idx) <= neighbors_to_merge:
            bins.append(idx)
            continue
        sub = pts[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = idx[np.argsort(sub[:, axis], kind="stable")]
        half = len(order) // 2
        stack.append(order[half:])
        stack.append(order[:half])
    centroids = np.empty((len(bins), 3))
    normals = np.empty((len(bins), 3))
    index = None
    for b, idx in enumerate(bins):
        sub = pts[idx]
        centroids[b] = sub.mean(axis=0)
        centered = sub - centroids[b]
        dec = eigendecompose_sym3(centered.T @ centered)
        if dec.values[1] <= 1e-12 * max(dec.values[0], 1e-300) and len(pts) > len(idx):
            # fewer than three non-collinear points: borrow the centroid's neighbourhood
            index = index or SpatialIndex(pts)
            nb = pts[index.query(centroids[b][None], SSNORMAL_FALLBACK_K)[0][0]]
            centered = nb - nb.mean(axis=0)
            dec = eigendecompose_sym3(centered.T @ centered)
        normals[b] = dec.vectors[:, 2]
    normals = orient_toward(normals, centroids, np.zeros(3))
    return PointCloud(centroids, {"normal": normals / np.linalg.norm(normals, axis=1, keepdims=True)})


# --------------------------------------------------------------------------
# normal-space and covariance sampling


def normal_buckets(normals: Array, n_lon: int = 32, n_lat: int = 16) -> Array:
    """Bucket id of each normal on a longitude/latitude grid over the upper hemisphere.

    Antipodal normals share a bucket.
    """
    n = normals.copy()
    flip = (n[:, 2] < 0) | ((n[:, 2] == 0) & ((n[:, 1] < 0) | ((n[:, 1] == 0) & (n[:, 0] < 0))))
    n[flip] *= -1.0
    polar = np.arccos(np.clip(n[:, 2], -1.0, 1.0))
    lon = np.mod(np.arctan2(n[:, 1], n[:, 0]), 2 * np.pi)
    lat_bin = np.minimum((polar / (np.pi / 2) * n_lat).astype(int), n_lat - 1)
    lon_bin = np.minimum((lon / (2 * np.pi) * n_lon).astype(int), n_lon - 1)
    return lat_bin * n_lon + lon_bin


def _round_robin(groups: Array, target: int, rng: np.random.Generator) -> Array:
    order = rng.permutation(len(groups))
    shuffled = groups[order]
    sort = np.argsort(shuffled, kind="stable")
    sorted_groups = shuffled[sort]
    starts = np.searchsorted(sorted_groups, sorted_groups, side="left")
    rank = np.arange(len(groups)) - starts
    picked_sorted = np.lexsort((sorted_groups, rank))[:target]
    return np.sort(order[sort[picked_sorted]])


def normal_space_sample(
    cloud: PointCloud, target: int, seed: int = 0, n_lon: int = 32, n_lat: int = 16
) -> PointCloud:
    if target > len(cloud):
        raise ValueError(f"target {target} exceeds cloud size {len(cloud)}")
    if target < 1:
        raise ValueError("target must be >= 1")
    cloud = _ensure_normals(cloud)
    buckets = normal_buckets(cloud.normals, n_lon, n_lat)
    picked = _round_robin(buckets, target, np.random.default_rng(seed))
    return cloud.subset(picked)


@dataclass
class CovarianceSampleResult:
    cloud: PointCloud
    rank_deficient: bool
    eigenvalues: Array = field(repr=False)


def constraint_vectors(points: Array, normals: Array) -> Array:
    return np.hstack([np.cross(points, normals), normals])


def covariance_sample_detailed(
    cloud: PointCloud, target: int, seed: int = 0, rel_tol: float = 1e-9, strategy: str = "balanced"
) -> CovarianceSampleResult:
    """Pick points that constrain each rigid-motion mode of the full cloud.

    Points are ranked per eigenvector ``v_j`` of ``C = sum c_i c_i^T`` by the
    alignment ``|c_i . v_j| / |c_i|``. With ``strategy="balanced"`` the next
    point comes from the mode whose accumulated return ``sum (c_i . v_j)^2`` is
    smallest; ``"round_robin"`` cycles through the modes instead. Null modes
    (eigenvalue <= rel_tol * largest) are ranked randomly and, in the balanced
    strategy, only used once every other list is exhausted.
    """
    if target > len(cloud):
        raise ValueError(f"target {target} exceeds cloud size {len(cloud)}")
    if target < 6:
        raise ValueError("target must be >= 6")
    if strategy not in ("balanced", "round_robin"):
        raise ValueError(f"unknown strategy {strategy!r}")
    cloud = _ensure_normals(cloud)
    c = constraint_vectors(cloud.points, cloud.normals)
    values, vectors = np.linalg.eigh(c.T @ c)
    values, vectors = values[::-1], vectors[:, ::-1]
    null = values <= rel_tol * values[0]
    proj = c @ vectors
    align = np.abs(proj) / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-300)
    rng = np.random.default_rng(seed)
    n = len(cloud)
    lists = [
        rng.permutation(n) if null[j] else np.lexsort((np.arange(n), -align[:, j]))
        for j in range(6)
    ]
    used = np.zeros(n, dtype=bool)
    cursors = [0] * 6
    returns = np.zeros(6)
    returns[null] = np.inf
    picked = []
    j = -1
    while len(picked) < target:
        if strategy == "balanced":
            j = int(np.argmin(returns))
            if np.isinf(returns[j]):
                j = int(np.argmin(np.where(np.array(cursors) < n, np.arange(6), 6)))
        else:
            j = (j + 1) % 6
        lst = lists[j]
        cur = cursors[j]
        while cur < n and used[lst[cur]]:
            cur += 1
        cursors[j] = cur
        if cur == n:
            returns[j] = np.inf
            continue
        i = lst[cur]
        used[i] = True
        picked.append(i)
        returns[~null & np.isfinite(returns)] += proj[i, ~null & np.isfinite(returns)] ** 2
    sel = np.sort(np.array(picked))
    return CovarianceSampleResult(cloud.subset(sel), bool(null.any()), values)


def covariance_sample(cloud: PointCloud, target: int, seed: int = 0) -> PointCloud:
    return covariance_sample_detailed(cloud, target, seed).cloud
