"""Output size and uniformity of stages 1-2 as the uniformity radius grows.

    python3 scripts/rho_sweep.py --scene room --n 30000 --out rho_sweep.csv
"""

import argparse
import csv
import time

import numpy as np

from spdf.core import SpatialIndex
from spdf.pipeline import SpdfConfig, run_spdf
from spdf.scenes import SCENES, synth_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scene", choices=SCENES, default="room")
    ap.add_argument("--n", type=int, default=30_000)
    ap.add_argument("--noise", type=float, default=0.01)
    ap.add_argument("--sigma", type=float, default=0.2)
    ap.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.2, 0.3, 0.5, 0.8, 1.35])
    ap.add_argument("--out", default="rho_sweep.csv")
    args = ap.parse_args()

    cloud = synth_scene(args.scene, args.n, args.noise, seed=0).cloud
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rho", "iterations", "uniform_points", "output_points", "surface", "curve", "junction",
                    "nn_radius_cv", "seconds"])
        for rho in args.rho:
            t0 = time.perf_counter()
            res = run_spdf(cloud, SpdfConfig.make(sigma=args.sigma, rho=rho))
            pts = res.cloud.points
            d = SpatialIndex(pts).query(pts, 11)[1][:, 10]
            counts = np.bincount(res.cloud.channels["label"], minlength=3)
            row = [rho, len(res.uniformized.history), len(res.uniformized.cloud), len(pts), *counts,
                   round(float(d.std() / d.mean()), 4), round(time.perf_counter() - t0, 2)]
            w.writerow(row)
            print(*row, sep="\t")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
