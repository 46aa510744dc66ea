"""Command-line entry points (``python3 -m spdf <command>``)."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys

import numpy as np

from .baselines import FilterSpec, Method
from .bench import load_config, run_benchmark, write_outputs
from .density import DensityParams, expected_saliencies
from .io import FORMATS, load_cloud, save_cloud
from .pipeline import HISTOGRAM_BINS, SALIENCY_NAMES, SpdfConfig, run_spdf
from .registration import IcpConfig, PerturbationSpec, icp, perturb, registration_errors
from .core import RigidTransform


def _cmd_expected_saliency(args) -> int:
    exp = expected_saliencies(DensityParams(rho=args.rho, sigma=args.sigma, xi1_convention=args.xi1_convention))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["xi1", "xi2", "xi3", "surface_threshold", "curve_threshold", "point_threshold"])
    w.writerow([repr(float(v)) for v in (*exp.xi, exp.surface_threshold, exp.curve_threshold, exp.point_threshold)])
    return 0


def _write_report(path, result) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "n_points", "n_marked", "n_removed", "saliency", "bin_lo", "bin_hi", "count"])
        for rec in result.uniformized.history:
            for name in SALIENCY_NAMES:
                for b, count in enumerate(rec.histograms[name]):
                    w.writerow([rec.iteration, rec.n_points, rec.n_marked, rec.n_removed, name,
                                repr(float(HISTOGRAM_BINS[b])), repr(float(HISTOGRAM_BINS[b + 1])), int(count)])


def _cmd_filter(args) -> int:
    cloud = load_cloud(args.inp, args.format)
    if args.method == "spdf":
        cfg = SpdfConfig.make(
            sigma=args.sigma, rho=args.rho, k=args.k, outlier_threshold=args.t, target_points=args.target_points
        )
        result = run_spdf(cloud, cfg)
        out = result.cloud
        if args.report:
            _write_report(args.report, result)
    else:
        if args.parameter is None:
            raise SystemExit(f"filter {args.method} needs --parameter")
        out = FilterSpec(Method(args.method), args.parameter, args.seed).apply(cloud)
    save_cloud(out, args.out, args.out_format)
    print(f"{len(cloud)} -> {len(out)} points", file=sys.stderr)
    return 0


def _parse_perturb(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected 'translation_m,rotation_deg'")
    return float(parts[0]), float(parts[1])


def _cmd_icp(args) -> int:
    reading = load_cloud(args.reading)
    reference = load_cloud(args.reference)
    gt = RigidTransform.from_matrix(np.loadtxt(args.ground_truth)) if args.ground_truth else RigidTransform()
    trans, rot_deg = args.init_perturb
    spec = PerturbationSpec(trans, math.radians(rot_deg), args.seed)
    cfg = IcpConfig(max_iterations=args.max_iterations, trim_keep_ratio=args.trim)
    result = icp(reading, reference, perturb(gt, spec), cfg)
    e_t, e_r = registration_errors(result.transform, gt)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow([f"T{i}{j}" for i in range(4) for j in range(4)] + ["eps_t", "eps_r_deg", "iterations", "converged"])
    w.writerow([repr(float(v)) for v in result.transform.matrix().ravel()]
               + [repr(e_t), repr(math.degrees(e_r)), result.iterations, int(result.converged)])
    return 0


def _cmd_bench(args) -> int:
    cfg = load_config(args.config)
    result = run_benchmark(cfg, jobs=args.jobs)
    write_outputs(result, args.out)
    expected = len(cfg.pairs) * sum(len(m.settings()) for m in cfg.methods) * cfg.trials_per_setting
    failed = sum(1 for r in result.rows if r["error"])
    print(f"{len(result.rows)} rows ({failed} failed) written to {args.out}", file=sys.stderr)
    return 0 if len(result.rows) == expected else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spdf", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expected-saliency", help="expected kernel strengths and saliency thresholds")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--xi1-convention", choices=("general_formula", "printed"), default="general_formula")
    p.set_defaults(func=_cmd_expected_saliency)

    p = sub.add_parser("filter", help="filter a point cloud")
    p.add_argument("method", choices=["spdf"] + [m.value for m in Method])
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=FORMATS)
    p.add_argument("--out-format", choices=FORMATS)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--rho", type=float, default=0.2)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--t", type=float, default=0.10, help="outlier threshold")
    p.add_argument("--target-points", type=int)
    p.add_argument("--report", help="CSV of per-iteration counts and saliency histograms")
    p.add_argument("--parameter", type=float, help="baseline parameter")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("icp", help="register a reading to a reference from a perturbed start")
    p.add_argument("--reading", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--ground-truth", help="text file with the 4x4 reading-to-reference transform")
    p.add_argument("--init-perturb", type=_parse_perturb, default=(0.5, 20.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=40)
    p.add_argument("--trim", type=float, default=0.75)
    p.set_defaults(func=_cmd_icp)

    p = sub.add_parser("bench", help="run a benchmark sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
