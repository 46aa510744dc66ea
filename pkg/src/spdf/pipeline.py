"""The three SpDF stages: density uniformisation, confidence-based outlier
rejection and per-primitive octree subsampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import centroid_cloud, octree_partition_count
from .core import Array, Label, PointCloud, SpatialIndex
from .density import DensityParams, ExpectedSaliencies, expected_saliencies
from .voting import VoteConfig, first_pass, neighborhoods, saliency_field, second_pass

log = logging.getLogger(__name__)

SALIENCY_NAMES = ("surfaceness", "curveness", "pointness")
HISTOGRAM_BINS = np.linspace(0.0, 1.0, 51)


@dataclass(frozen=True)
class SpdfConfig:
    vote: VoteConfig = field(default_factory=VoteConfig)
    density: DensityParams = field(default_factory=DensityParams)
    outlier_threshold: float = 0.10
    max_iterations: int = 50
    convergence_fraction: float = 0.01
    target_points: int | None = None
    decimation_aggressiveness: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.outlier_threshold < 1.0:
            raise ValueError("outlier_threshold must be in [0, 1)")
        if not 0.0 < self.convergence_fraction < 0.5:
            raise ValueError("convergence_fraction must be in (0, 0.5)")
        if not 0.0 < self.decimation_aggressiveness <= 1.0:
            raise ValueError("decimation_aggressiveness must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @classmethod
    def make(cls, sigma: float = 0.2, rho: float = 0.2, k: int = 50, **kwargs) -> "SpdfConfig":
        return cls(vote=VoteConfig(sigma=sigma, k=k), density=DensityParams(rho=rho, sigma=sigma), **kwargs)


@dataclass
class IterationRecord:
    iteration: int
    n_points: int
    n_marked: int
    n_removed: int
    histograms: dict[str, Array] = field(repr=False)


@dataclass
class UniformizeResult:
    cloud: PointCloud
    indices: Array
    converged: bool
    history: list[IterationRecord]
    expected: ExpectedSaliencies

    @property
    def counts(self) -> list[int]:
        return [rec.n_points for rec in self.history] + [len(self.cloud)]


def density_ratios(saliencies: Array, expected: ExpectedSaliencies) -> Array:
    """Each saliency divided by the uniform-density expectation of its primitive."""
    return saliencies / expected.thresholds()[None, :]


def _select_removals(excess: Array, nn1: Array, quota: int) -> Array:
    """Greedy by decreasing excess; never remove both members of a mutual nearest pair."""
    candidates = np.nonzero(excess > 0)[0]
    order = candidates[np.lexsort((candidates, -excess[candidates]))]
    removed = np.zeros(len(excess), dtype=bool)
    chosen = []
    for i in order:
        if len(chosen) >= quota:
            break
        j = nn1[i]
        if removed[j] and nn1[j] == i:
            continue
        removed[i] = True
        chosen.append(i)
    return np.array(chosen, dtype=np.intp)


def uniformize(cloud: PointCloud, cfg: SpdfConfig) -> UniformizeResult:
    """Iteratively decimate points whose unit-ball saliencies exceed the values
    expected for uniform density, until the number of points is stable."""
    expected = expected_saliencies(cfg.density)
    k = cfg.vote.k
    keep = np.arange(len(cloud))
    history: list[IterationRecord] = []
    converged = False
    for iteration in range(cfg.max_iterations):
        pts = cloud.points[keep]
        if len(pts) <= k:
            log.warning("uniformize stopped: %d points left for k=%d", len(pts), k)
            break
        nb = neighborhoods(pts, k)
        sal = saliency_field(first_pass(pts, cfg.vote, nb=nb).decompose()).stacked()
        excess = density_ratios(sal, expected).max(axis=1) - 1.0
        # points with fewer than k distinct neighbours are never marked
        full = nb.valid.all(axis=1)
        excess[~full] = -np.inf
        # later copies of coincident points carry no information: drop them all, outside the quota
        dup = (~nb.valid & (nb.indices < np.arange(len(pts))[:, None])).any(axis=1)
        excess[dup] = -np.inf
        marked = int(np.count_nonzero(excess > 0))
        quota = math.ceil(cfg.decimation_aggressiveness * marked)
        removed = np.union1d(_select_removals(excess, nb.indices[:, 0], quota), np.nonzero(dup)[0])
        marked += int(np.count_nonzero(dup))
        history.append(
            IterationRecord(
                iteration,
                len(pts),
                marked,
                len(removed),
                {name: np.histogram(sal[:, d], HISTOGRAM_BINS)[0] for d, name in enumerate(SALIENCY_NAMES)},
            )
        )
        log.debug("iteration %d: %d points, %d marked, %d removed", iteration, len(pts), marked, len(removed))
        if len(removed):
            mask = np.ones(len(keep), dtype=bool)
            mask[removed] = False
            keep = keep[mask]
        if len(removed) < cfg.convergence_fraction * len(pts):
            converged = True
            break
    return UniformizeResult(cloud.subset(keep), keep, converged, history, expected)


def final_saliency_check(cloud: PointCloud, cfg: SpdfConfig) -> Array:
    """Fraction-ready boolean mask: every saliency at or below its threshold."""
    expected = expected_saliencies(cfg.density)
    sal = saliency_field(first_pass(cloud, cfg.vote).decompose()).stacked()
    return density_ratios(sal, expected).max(axis=1) <= 1.0


@dataclass
class RejectionResult:
    cloud: PointCloud
    indices: Array
    max_confidence: dict[Label, float]
    empty_classes: list[Label]


def label_points(cloud: PointCloud, cfg: SpdfConfig) -> PointCloud:
    """Label every point by its dominant second-pass saliency."""
    index = SpatialIndex(cloud.points)
    field_ = second_pass(cloud, first_pass(cloud, cfg.vote, index=index), cfg.vote)
    sal = field_.stacked()
    labels = field_.labels()
    confidence = sal[np.arange(len(sal)), labels]
    return cloud.with_channels(
        label=labels,
        confidence=confidence,
        saliency=sal,
        directions=field_.directions,
    )


def label_and_reject(cloud: PointCloud, cfg: SpdfConfig) -> RejectionResult:
    labeled = label_points(cloud, cfg)
    labels = labeled.channels["label"]
    confidence = labeled.channels["confidence"]
    keep = np.ones(len(labeled), dtype=bool)
    max_conf: dict[Label, float] = {}
    empty = []
    for lab in Label:
        members = labels == lab
        if not members.any():
            empty.append(lab)
            continue
        top = float(confidence[members].max())
        max_conf[lab] = top
        keep[members] = confidence[members] >= cfg.outlier_threshold * top
    idx = np.nonzero(keep)[0]
    return RejectionResult(labeled.subset(idx), idx, max_conf, empty)


def allocate_budgets(class_sizes: Array, target: int) -> Array:
    """Largest-remainder split of ``target`` proportional to ``class_sizes``;
    every non-empty class gets at least one point."""
    sizes = np.asarray(class_sizes, dtype=np.int64)
    total = sizes.sum()
    quotas = target * sizes / total
    budgets = np.floor(quotas).astype(np.int64)
    order = np.lexsort((np.arange(len(sizes)), -(quotas - budgets)))
    for c in order[: target - budgets.sum()]:
        budgets[c] += 1
    budgets = np.where((sizes > 0) & (budgets == 0), 1, budgets)
    while budgets.sum() > target:
        budgets[np.argmax(budgets)] -= 1
    return np.minimum(budgets, sizes)


def primitive_spatial_sample(cloud: PointCloud, target_points: int) -> PointCloud:
    """Octree-centroid subsampling run separately on each primitive class."""
    n = len(cloud)
    if target_points > n:
        raise ValueError(f"target {target_points} exceeds cloud size {n}")
    if target_points < 3:
        raise ValueError("target_points must be >= 3")
    labels = cloud.channels["label"]
    sizes = np.array([np.count_nonzero(labels == lab) for lab in Label])
    budgets = allocate_budgets(sizes, target_points)
    parts = []
    for lab, budget in zip(Label, budgets):
        if budget == 0:
            continue
        sub = cloud.subset(np.nonzero(labels == lab)[0])
        groups, n_groups = octree_partition_count(sub.points, int(budget))
        part = centroid_cloud(sub, groups, n_groups, carry=("confidence",))
        parts.append(part.with_channels(label=np.full(len(part), int(lab), dtype=np.int8)))
    points = np.vstack([p.points for p in parts])
    channels = {
        name: np.concatenate([p.channels[name] for p in parts]) for name in ("label", "confidence")
    }
    return PointCloud(points, channels)


@dataclass
class SpdfResult:
    cloud: PointCloud
    uniformized: UniformizeResult
    rejection: RejectionResult


def run_spdf(cloud: PointCloud, cfg: SpdfConfig) -> SpdfResult:
    uni = uniformize(cloud, cfg)
    rej = label_and_reject(uni.cloud, cfg)
    out = rej.cloud
    if cfg.target_points is not None:
        target = min(cfg.target_points, len(out))
        if target < cfg.target_points:
            log.warning("stage 2 left %d points, below target %d", len(out), cfg.target_points)
        out = primitive_spatial_sample(out, target)
    else:
        out = PointCloud(out.points, {name: out.channels[name] for name in ("label", "confidence")})
    return SpdfResult(out, uni, rej)


def spdf(cloud: PointCloud, cfg: SpdfConfig) -> PointCloud:
    return run_spdf(cloud, cfg).cloud
