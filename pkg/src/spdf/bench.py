"""Benchmark driver: filter both scans of each pair, register from perturbed
ground truth, and aggregate median errors per method and per point-count decade.

Config files are YAML (or JSON)::

    master_seed: 0
    trials_per_setting: 100
    perturbation: {translation: 0.5, rotation_deg: 20}
    icp: {max_iterations: 40, trim_keep_ratio: 0.75}
    pairs:
      - name: room
        synth: {scene: room, n: 30000, noise_sigma: 0.01, seed: 0}
      - name: scan_07
        reading: scans/07.csv          # relative to the config file
        reference: scans/06.csv
        ground_truth: [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
    methods:
      - {method: random, parameters: [0.01, 0.1, 1.0]}
      - {method: voxel, range: {start: 2.49, stop: 0.01, num: 8, scale: log}}
      - {method: voxel, budgets: [5000]}
      - {method: spatial_spdf, sigma: 0.2, rho: 0.5, budgets: [5000]}
      - {method: spdf, sigma: 0.2, parameters: [0.3, 0.5]}

``parameters`` are the method's own parameter (the uniformity radius for
``spdf``); ``budgets`` ask for a point count and search the parameter on the
reference scan.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .baselines import FilterSpec, Method
from .core import PointCloud, RigidTransform, SpatialIndex
from .io import load_cloud
from .pipeline import SALIENCY_NAMES, HISTOGRAM_BINS, SpdfConfig, run_spdf
from .registration import IcpConfig, PerturbationSpec, icp, perturb, reference_with_normals, registration_errors
from .scenes import synth_pair

log = logging.getLogger(__name__)

SPDF_METHODS = ("spdf", "spatial_spdf")
RAW_FIELDS = (
    "pair", "method", "parameter", "budget", "reading_points", "reference_points",
    "trial", "trial_seed", "eps_t", "eps_r_deg", "iterations", "converged", "error",
)


@dataclass
class PairSpec:
    name: str
    reading: PointCloud
    reference: PointCloud
    ground_truth: RigidTransform


@dataclass
class MethodSweep:
    method: str
    parameters: list[float] = field(default_factory=list)
    budgets: list[int] = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def settings(self) -> list[tuple[float | None, int | None]]:
        return [(p, None) for p in self.parameters] + [(None, b) for b in self.budgets]


@dataclass
class BenchConfig:
    pairs: list[PairSpec]
    methods: list[MethodSweep]
    trials_per_setting: int = 100
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    icp: IcpConfig = field(default_factory=IcpConfig)
    master_seed: int = 0

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("benchmark needs at least one pair")
        if not self.methods:
            raise ValueError("benchmark needs at least one method")
        if self.trials_per_setting < 1:
            raise ValueError("trials_per_setting must be >= 1")


def _sweep_values(spec: dict) -> list[float]:
    start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
    if spec.get("scale", "log") == "log":
        return np.geomspace(start, stop, num).tolist()
    return np.linspace(start, stop, num).tolist()


def _load_pair(entry: dict, base: Path) -> PairSpec:
    if "synth" in entry:
        s = dict(entry["synth"])
        scene = s.pop("scene")
        pair = synth_pair(scene, int(s.pop("n")), float(s.pop("noise_sigma", 0.01)), int(s.pop("seed", 0)), **s)
        return PairSpec(entry.get("name", scene), pair.reading, pair.reference, pair.ground_truth)
    gt = entry.get("ground_truth")
    if gt is None and "ground_truth_file" in entry:
        gt = np.loadtxt(base / entry["ground_truth_file"])
    gt = RigidTransform.from_matrix(np.asarray(gt, dtype=np.float64)) if gt is not None else RigidTransform()
    return PairSpec(
        entry.get("name", Path(entry["reading"]).stem),
        load_cloud(base / entry["reading"], entry.get("format")),
        load_cloud(base / entry["reference"], entry.get("format")),
        gt,
    )


def load_config(path: str | Path) -> BenchConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text())
    base = path.parent
    methods = []
    for m in raw["methods"]:
        m = dict(m)
        name = m.pop("method")
        params = [float(p) for p in m.pop("parameters", [])]
        if "range" in m:
            params += _sweep_values(m.pop("range"))
        budgets = [int(b) for b in m.pop("budgets", [])]
        methods.append(MethodSweep(name, params, budgets, m))
    pert = raw.get("perturbation", {})
    return BenchConfig(
        pairs=[_load_pair(p, base) for p in raw["pairs"]],
        methods=methods,
        trials_per_setting=int(raw.get("trials_per_setting", 100)),
        perturbation=PerturbationSpec(
            translation_magnitude=float(pert.get("translation", 0.5)),
            rotation_magnitude=math.radians(float(pert.get("rotation_deg", 20.0))),
            per_axis=bool(pert.get("per_axis", False)),
        ),
        icp=IcpConfig(**raw.get("icp", {})),
        master_seed=int(raw.get("master_seed", 0)),
    )


# --------------------------------------------------------------------------
# filtering with parameter search


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _spdf_config(sweep: MethodSweep, rho: float | None, target: int | None) -> SpdfConfig:
    opts = dict(sweep.options)
    sigma = float(opts.pop("sigma", 0.2))
    k = int(opts.pop("k", 50))
    rho = float(opts.pop("rho", 0.2)) if rho is None else rho
    return SpdfConfig.make(sigma=sigma, rho=rho, k=k, target_points=target, **opts)


def _bisect(count, lo: float, hi: float, budget: int, increasing: bool, integer: bool = False, steps: int = 40):
    """Parameter whose output count is closest to ``budget``; ``count`` is monotone."""
    best, best_err = None, math.inf
    for _ in range(steps):
        mid = round(math.sqrt(lo * hi)) if integer else math.sqrt(lo * hi)
        c = count(mid)
        err = abs(c - budget)
        if err < best_err:
            best, best_err = mid, err
        if c == budget or (integer and hi - lo <= 1):
            break
        if (c < budget) == increasing:
            lo = mid
        else:
            hi = mid
    return best


def resolve_parameter(method: str, cloud: PointCloud, budget: int, seed: int) -> float:
    m = Method(method)
    n = len(cloud)
    if m is Method.RANDOM:
        return min(1.0, budget / n)
    if m in (Method.NSS, Method.COVS):
        return float(min(budget, n))
    if m is Method.VOXEL:
        extent = float(np.ptp(cloud.points, axis=0).max())
        return _bisect(lambda p: len(FilterSpec(m, p).apply(cloud)), extent * 1e-6, extent, budget, increasing=False)
    if m is Method.MAX_DENSITY:
        return _bisect(lambda p: len(FilterSpec(m, p, seed).apply(cloud)), 1e-6, 1e12, budget, increasing=True)
    lo = 1 if m is Method.OCTREE else 3
    return float(_bisect(lambda p: len(FilterSpec(m, p).apply(cloud)), lo, n, budget, increasing=False, integer=True))


@dataclass
class FilteredPair:
    parameter: float
    reading: PointCloud
    reference: PointCloud
    histograms: list[tuple] = field(default_factory=list)
    filter_ms: float = 0.0
    error: str = ""


def filter_pair(pair: PairSpec, sweep: MethodSweep, parameter: float | None, budget: int | None, seed: int) -> FilteredPair:
    t0 = time.perf_counter()
    if sweep.method in SPDF_METHODS:
        if sweep.method == "spdf":
            if parameter is None:
                raise ValueError("spdf takes a uniformity radius, not a point budget")
            cfg = _spdf_config(sweep, parameter, None)
        else:
            target = budget if budget is not None else int(parameter)
            cfg = _spdf_config(sweep, None, target)
            parameter = float(target)
        ref = run_spdf(pair.reference, cfg)
        read = run_spdf(pair.reading, cfg)
        hist = [
            (rec.iteration, name, float(HISTOGRAM_BINS[b]), float(HISTOGRAM_BINS[b + 1]), int(rec.histograms[name][b]))
            for rec in ref.uniformized.history
            for name in SALIENCY_NAMES
            for b in range(len(HISTOGRAM_BINS) - 1)
        ]
        out = FilteredPair(parameter, read.cloud, ref.cloud, hist)
    else:
        if parameter is None:
            parameter = resolve_parameter(sweep.method, pair.reference, budget, seed)
        spec = FilterSpec(sweep.method, parameter, seed)
        out = FilteredPair(parameter, spec.apply(pair.reading), spec.apply(pair.reference))
    out.filter_ms = 1e3 * (time.perf_counter() - t0)
    return out


# --------------------------------------------------------------------------
# running


@dataclass
class BenchResult:
    rows: list[dict]
    timings: list[dict]
    histograms: list[dict]

    def raw_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, RAW_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _cell(row[k]) for k in RAW_FIELDS})
        return buf.getvalue()


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return int(value)
    return "" if value is None else value


def _run_setting(args) -> tuple[list[dict], dict, list[dict]]:
    cfg, p_i, m_i, s_i, parameter, budget = args
    pair = cfg.pairs[p_i]
    sweep = cfg.methods[m_i]
    key = (cfg.master_seed, p_i, m_i, s_i)
    base = {"pair": pair.name, "method": sweep.method, "budget": budget}
    rows, hist_rows = [], []
    try:
        filtered = filter_pair(pair, sweep, parameter, budget, _derived_seed(*key, 1 << 20))
        index = SpatialIndex(filtered.reference.points)
        reference = reference_with_normals(filtered.reference, index)
    except Exception as err:  # recorded per row, the sweep continues
        log.warning("filter failed for %s/%s: %s", pair.name, sweep.method, err)
        for t in range(cfg.trials_per_setting):
            rows.append(_failed_row(base, parameter, t, _derived_seed(*key, t), err))
        return rows, {**base, "parameter": parameter, "filter_ms": None, "icp_ms": None}, []
    base["parameter"] = float(filtered.parameter)
    icp_ms = 0.0
    for t in range(cfg.trials_per_setting):
        seed = _derived_seed(*key, t)
        row = {**base, "reading_points": len(filtered.reading), "reference_points": len(filtered.reference),
               "trial": t, "trial_seed": seed}
        t0 = time.perf_counter()
        try:
            spec = PerturbationSpec(cfg.perturbation.translation_magnitude, cfg.perturbation.rotation_magnitude,
                                    seed, cfg.perturbation.per_axis)
            result = icp(filtered.reading, reference, perturb(pair.ground_truth, spec), cfg.icp, index)
            e_t, e_r = registration_errors(result.transform, pair.ground_truth)
            row.update(eps_t=e_t, eps_r_deg=math.degrees(e_r), iterations=result.iterations,
                       converged=result.converged, error="")
        except Exception as err:
            row = _failed_row(base, filtered.parameter, t, seed, err, len(filtered.reading), len(filtered.reference))
        icp_ms += 1e3 * (time.perf_counter() - t0)
        rows.append(row)
    for it, name, lo, hi, count in filtered.histograms:
        hist_rows.append({"pair": pair.name, "method": sweep.method, "parameter": base["parameter"],
                          "iteration": it, "saliency": name, "bin_lo": lo, "bin_hi": hi, "count": count})
    timing = {**base, "filter_ms": filtered.filter_ms, "icp_ms": icp_ms}
    return rows, timing, hist_rows


def _failed_row(base, parameter, trial, seed, err, n_read=None, n_ref=None) -> dict:
    return {**base, "parameter": parameter, "reading_points": n_read, "reference_points": n_ref,
            "trial": trial, "trial_seed": seed, "eps_t": math.nan, "eps_r_deg": math.nan,
            "iterations": 0, "converged": False, "error": type(err).__name__}


def run_benchmark(cfg: BenchConfig, jobs: int = 1) -> BenchResult:
    tasks = [
        (cfg, p_i, m_i, s_i, parameter, budget)
        for p_i in range(len(cfg.pairs))
        for m_i, sweep in enumerate(cfg.methods)
        for s_i, (parameter, budget) in enumerate(sweep.settings())
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_setting, tasks))
    else:
        outputs = [_run_setting(t) for t in tasks]
    rows, timings, hists = [], [], []
    # map() preserves task order, so merging is deterministic
    for r, tm, h in outputs:
        rows.extend(r)
        timings.append(tm)
        hists.extend(h)
    return BenchResult(rows, timings, hists)


# --------------------------------------------------------------------------
# summaries


def _median(values) -> float:
    values = [v for v in values if not math.isnan(v)]
    return float(np.median(values)) if values else math.nan


def summarize(result: BenchResult) -> list[dict]:
    """Per-method medians (all pairs and per pair) and per point-count decade medians."""
    out = []
    groups: dict[tuple, list[dict]] = {}
    for row in result.rows:
        groups.setdefault(("method", "all", row["method"], ""), []).append(row)
        groups.setdefault(("method", row["pair"], row["method"], ""), []).append(row)
        if row["reference_points"]:
            decade = int(math.floor(math.log10(row["reference_points"])))
            groups.setdefault(("decade", "all", row["method"], decade), []).append(row)
    for (kind, pair, method, decade), rows in groups.items():
        out.append({
            "group": kind, "pair": pair, "method": method, "decade": decade, "n": len(rows),
            "median_eps_t": _median([r["eps_t"] for r in rows]),
            "median_eps_r_deg": _median([r["eps_r_deg"] for r in rows]),
        })
    return out


def _write_csv(path: Path, rows: list[dict], fields) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fields})


def write_outputs(result: BenchResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "raw.csv").write_text(result.raw_csv())
    _write_csv(out / "summary.csv", summarize(result),
               ("group", "pair", "method", "decade", "n", "median_eps_t", "median_eps_r_deg"))
    _write_csv(out / "histograms.csv", result.histograms,
               ("pair", "method", "parameter", "iteration", "saliency", "bin_lo", "bin_hi", "count"))
    _write_csv(out / "timings.csv", result.timings,
               ("pair", "method", "parameter", "budget", "filter_ms", "icp_ms"))
