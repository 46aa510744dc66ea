"""Deterministic synthetic scenes with known primitive labels and normals.

Scenes are desk-scale stand-ins for LIDAR scans: ``room`` and ``pole_forest``
are sampled with a density falling off as 1/d^2 from a sensor position, and
``density_gradient`` is a plane whose density decays exponentially along x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Array, Label, PointCloud, RigidTransform

SCENES = ("plane", "room", "pole_forest", "density_gradient")


@dataclass
class Scene:
    cloud: PointCloud
    labels: Array
    normals: Array
    meta: dict = field(default_factory=dict)


class _Sampler:
    """Collects surface patches, then draws points by area (optionally sensor-weighted)."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.patches: list[tuple[float, callable, int]] = []

    def add(self, area: float, draw, label: Label):
        self.patches.append((area, draw, int(label)))

    def sample(self, n: int, sensor: Array | None = None, near: float = 1.0) -> tuple[Array, Array, Array]:
        areas = np.array([a for a, _, _ in self.patches])
        pts, nrm, lab = [], [], []
        have = 0
        while have < n:
            m = max(4 * (n - have), 1024)
            counts = self.rng.multinomial(m, areas / areas.sum())
            for (area, draw, label), c in zip(self.patches, counts):
                if c == 0:
                    continue
                p, nv = draw(c)
                if sensor is not None:
                    d2 = np.sum((p - sensor) ** 2, axis=1)
                    accept = self.rng.random(c) < np.minimum(1.0, near**2 / d2)
                    p, nv = p[accept], nv[accept]
                pts.append(p)
                nrm.append(nv)
                lab.append(np.full(len(p), label, dtype=np.int8))
                have += len(p)
        pts, nrm, lab = np.vstack(pts), np.vstack(nrm), np.concatenate(lab)
        pick = np.sort(self.rng.permutation(len(pts))[:n])
        return pts[pick], nrm[pick], lab[pick]


def _rect(rng, origin, u, v, normal):
    origin, u, v, normal = (np.asarray(a, dtype=np.float64) for a in (origin, u, v, normal))

    def draw(c):
        a, b = rng.random(c), rng.random(c)
        return origin + a[:, None] * u + b[:, None] * v, np.tile(normal, (c, 1))

    return float(np.linalg.norm(np.cross(u, v))), draw


def _cylinder(rng, center_xy, radius, z0, height):
    cx, cy = center_xy

    def draw(c):
        theta = rng.uniform(0, 2 * np.pi, c)
        z = rng.uniform(z0, z0 + height, c)
        radial = np.stack([np.cos(theta), np.sin(theta), np.zeros(c)], axis=1)
        return np.stack([cx + radius * radial[:, 0], cy + radius * radial[:, 1], z], axis=1), radial

    return 2 * np.pi * radius * height, draw


def _box(sampler: _Sampler, rng, lo, size):
    lo = np.asarray(lo, dtype=np.float64)
    sx, sy, sz = size
    ex, ey, ez = np.eye(3)
    faces = [
        (lo + ez * sz, ex * sx, ey * sy, ez),
        (lo, ex * sx, ez * sz, -ey),
        (lo + ey * sy, ex * sx, ez * sz, ey),
        (lo, ey * sy, ez * sz, -ex),
        (lo + ex * sx, ey * sy, ez * sz, ex),
    ]
    for origin, u, v, nrm in faces:
        sampler.add(*_rect(rng, origin, u, v, nrm), Label.SURFACE)


def _plane(n, rng, layout, size=5.0):
    xy = rng.random((n, 2)) * size
    pts = np.column_stack([xy, np.zeros(n)])
    return pts, np.tile([0.0, 0.0, 1.0], (n, 1)), np.zeros(n, dtype=np.int8), {"size": size}


def _room(n, rng, layout, size=8.0, height=3.0, sensor=(2.5, 3.0, 1.2)):
    s = _Sampler(rng)
    s.add(*_rect(rng, (0, 0, 0), (size, 0, 0), (0, size, 0), (0, 0, 1)), Label.SURFACE)
    s.add(*_rect(rng, (0, 0, 0), (0, size, 0), (0, 0, height), (1, 0, 0)), Label.SURFACE)
    s.add(*_rect(rng, (0, 0, 0), (size, 0, 0), (0, 0, height), (0, 1, 0)), Label.SURFACE)
    s.add(*_cylinder(rng, (5.0, 5.5, ), 0.3, 0.0, height), Label.SURFACE)
    _box(s, rng, (1.0, 5.5, 0.0), (1.2, 0.8, 0.7))
    _box(s, rng, (5.5, 1.5, 0.0), (0.6, 0.6, 1.0))
    pts, nrm, lab = s.sample(n, np.asarray(sensor), near=1.5)
    return pts, nrm, lab, {"size": size, "height": height, "sensor": list(sensor)}


def _terrain(rng, layout, size, amplitude, wavelength):
    phase = layout.uniform(0, 2 * np.pi, 2)
    k = 2 * np.pi / wavelength

    def height(x, y):
        return amplitude * np.sin(k * x + phase[0]) * np.cos(0.8 * k * y + phase[1])

    def draw(c):
        x, y = rng.random(c) * size, rng.random(c) * size
        gx = amplitude * k * np.cos(k * x + phase[0]) * np.cos(0.8 * k * y + phase[1])
        gy = -amplitude * 0.8 * k * np.sin(k * x + phase[0]) * np.sin(0.8 * k * y + phase[1])
        nrm = np.stack([-gx, -gy, np.ones(c)], axis=1)
        return np.stack([x, y, height(x, y)], axis=1), nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    # area ignores the slope; amplitudes are small relative to the wavelength
    return size * size, draw, height


def _pole_forest(n, rng, layout, size=16.0, n_poles=24, sensor=(8.0, 8.0, 1.5), amplitude=0.4, wavelength=7.0):
    s = _Sampler(rng)
    area, draw, height = _terrain(rng, layout, size, amplitude, wavelength)
    s.add(area, draw, Label.SURFACE)
    sensor = np.asarray(sensor, dtype=np.float64)
    centers = []
    while len(centers) < n_poles:
        c = layout.uniform(0.5, size - 0.5, 2)
        if np.linalg.norm(c - sensor[:2]) > 1.5 and all(np.linalg.norm(c - o) > 1.0 for o in centers):
            centers.append(c)
    for c in centers:
        radius = layout.uniform(0.1, 0.3)
        base = float(height(c[0], c[1])) - 0.2
        s.add(*_cylinder(rng, c, radius, base, layout.uniform(2.0, 4.0)), Label.SURFACE)
    sensor = sensor + [0.0, 0.0, float(height(sensor[0], sensor[1]))]
    pts, nrm, lab = s.sample(n, sensor, near=2.0)
    return pts, nrm, lab, {"size": size, "sensor": sensor.tolist(), "poles": np.array(centers).tolist()}


def _density_gradient(n, rng, layout, size=10.0, decay=2.5):
    # x follows an exponential truncated to [0, size]
    u = rng.random(n)
    x = -decay * np.log1p(-u * (1.0 - np.exp(-size / decay)))
    y = rng.random(n) * size
    pts = np.column_stack([x, y, np.zeros(n)])
    return pts, np.tile([0.0, 0.0, 1.0], (n, 1)), np.zeros(n, dtype=np.int8), {"size": size, "decay": decay}


_BUILDERS = {
    "plane": _plane,
    "room": _room,
    "pole_forest": _pole_forest,
    "density_gradient": _density_gradient,
}


def synth_scene(
    name: str, n: int, noise_sigma: float = 0.0, seed: int = 0, layout_seed: int | None = None, **options
) -> Scene:
    """Sample scene ``name``. ``seed`` drives point sampling and noise;
    ``layout_seed`` (default: ``seed``) drives randomised geometry such as pole placement."""
    if name not in _BUILDERS:
        raise ValueError(f"unknown scene {name!r}; choose from {SCENES}")
    if n < 100:
        raise ValueError("scenes need at least 100 points")
    rng = np.random.default_rng(seed)
    layout = np.random.default_rng(seed if layout_seed is None else layout_seed)
    pts, normals, labels, meta = _BUILDERS[name](n, rng, layout, **options)
    if "sensor" in meta:
        # scans are expressed in the sensor frame
        pts = pts - np.asarray(meta["sensor"])
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)
    meta.update(name=name, n=n, noise_sigma=noise_sigma, seed=seed, layout_seed=layout_seed)
    return Scene(PointCloud(pts), labels, normals, meta)


@dataclass
class ScanPair:
    reading: PointCloud
    reference: PointCloud
    ground_truth: RigidTransform
    name: str = ""


def synth_pair(
    name: str,
    n: int,
    noise_sigma: float = 0.01,
    seed: int = 0,
    sensor_offset: Array = (1.0, -0.6, 0.0),
    yaw: float = 0.15,
    **options,
) -> ScanPair:
    """Two scans of the same scene layout taken from different sensor poses.

    For scenes without a sensor the offset is applied as a plain rigid motion.
    Each scan is expressed in its own sensor frame, and
    ``reference ~ ground_truth(reading)``.
    """
    ref = synth_scene(name, n, noise_sigma, seed, layout_seed=seed, **options)
    offset = np.asarray(sensor_offset, dtype=np.float64)
    R = RigidTransform.from_rotvec([0.0, 0.0, yaw]).rotation
    if "sensor" in ref.meta:
        sensor = np.asarray(ref.meta["sensor"]) + offset
        read = synth_scene(name, n, noise_sigma, seed + 7919, layout_seed=seed, sensor=tuple(sensor), **options)
        world = read.cloud.points + np.asarray(read.meta["sensor"])
        origin = np.asarray(read.meta["sensor"]) - np.asarray(ref.meta["sensor"])
    else:
        read = synth_scene(name, n, noise_sigma, seed + 7919, layout_seed=seed, **options)
        world = read.cloud.points
        origin = offset
    ground_truth = RigidTransform(R, origin)
    # world points relative to the reference origin, mapped into the reading frame
    if "sensor" in ref.meta:
        world = world - np.asarray(ref.meta["sensor"])
    reading = PointCloud(ground_truth.inverse().apply(world))
    return ScanPair(reading, ref.cloud, ground_truth, name)
