import csv
import io
import math

import numpy as np
import pytest
import yaml

from spdf.bench import (
    RAW_FIELDS,
    BenchConfig,
    MethodSweep,
    PairSpec,
    load_config,
    resolve_parameter,
    run_benchmark,
    summarize,
    write_outputs,
)
from spdf.core import PointCloud, RigidTransform
from spdf.io import save_cloud
from spdf.registration import IcpConfig, PerturbationSpec
from spdf.scenes import synth_pair, synth_scene


@pytest.fixture(scope="module")
def pair():
    p = synth_pair("room", 4000, noise_sigma=0.01, seed=0)
    return PairSpec("room", p.reading, p.reference, p.ground_truth)


def read_raw(result):
    return list(csv.DictReader(io.StringIO(result.raw_csv())))


def test_config_validation(pair):
    with pytest.raises(ValueError):
        BenchConfig([], [MethodSweep("random", [1.0])])
    with pytest.raises(ValueError):
        BenchConfig([pair], [])
    with pytest.raises(ValueError):
        BenchConfig([pair], [MethodSweep("random", [1.0])], trials_per_setting=0)


def test_identical_pair_zero_perturbation_gives_zero_error():
    cloud = synth_scene("room", 3000, seed=1).cloud
    cfg = BenchConfig(
        [PairSpec("same", cloud, cloud, RigidTransform())],
        [MethodSweep("random", [1.0])],
        trials_per_setting=3,
        perturbation=PerturbationSpec(0.0, 0.0),
        icp=IcpConfig(matches_per_point=1),
    )
    rows = run_benchmark(cfg).rows
    assert all(r["eps_t"] == 0.0 and r["eps_r_deg"] == 0.0 for r in rows)


def test_row_count_and_order(pair):
    cfg = BenchConfig(
        [pair, PairSpec("copy", pair.reading, pair.reference, pair.ground_truth)],
        [MethodSweep("random", [0.5, 0.2]), MethodSweep("voxel", [0.2], budgets=[1000])],
        trials_per_setting=2,
    )
    rows = run_benchmark(cfg).rows
    assert len(rows) == 2 * (2 + 2) * 2
    keys = [(r["pair"], r["method"], r["parameter"], r["trial"]) for r in rows]
    assert keys[:4] == [("room", "random", 0.5, 0), ("room", "random", 0.5, 1), ("room", "random", 0.2, 0), ("room", "random", 0.2, 1)]
    assert [r["pair"] for r in rows] == ["room"] * 8 + ["copy"] * 8


def test_random_sweep_spans_decades():
    p = synth_pair("room", 30000, noise_sigma=0.01, seed=0)
    ps = np.geomspace(1.0, 0.004, 6).tolist()
    cfg = BenchConfig([PairSpec("room", p.reading, p.reference, p.ground_truth)], [MethodSweep("random", ps)],
                      trials_per_setting=1, icp=IcpConfig(max_iterations=10))
    rows = run_benchmark(cfg).rows
    assert not any(r["error"] for r in rows)
    decades = {int(math.floor(math.log10(r["reference_points"]))) for r in rows}
    assert decades == {2, 3, 4}


def test_budget_search_lands_near_target(pair):
    for method in ("voxel", "octree", "max_density", "ssnormal", "random", "nss", "covs"):
        p = resolve_parameter(method, pair.reference, 800, seed=0)
        from spdf.baselines import FilterSpec

        n = len(FilterSpec(method, p, seed=0).apply(pair.reference))
        assert abs(n - 800) <= 0.2 * 800, method


def test_failures_recorded_and_run_continues():
    plane = synth_scene("plane", 2000, seed=0).cloud
    room = synth_pair("room", 3000, seed=0)
    cfg = BenchConfig(
        [PairSpec("plane", plane, plane, RigidTransform()), PairSpec("room", room.reading, room.reference, room.ground_truth)],
        [MethodSweep("random", [1.0])],
        trials_per_setting=2,
    )
    rows = run_benchmark(cfg).rows
    assert len(rows) == 4
    assert all(not r["converged"] and r["error"] == "DegenerateGeometryError" for r in rows[:2])
    assert all(r["converged"] and not r["error"] for r in rows[2:])


def test_summary_recomputable_from_raw(pair):
    cfg = BenchConfig([pair], [MethodSweep("random", [0.5, 0.05]), MethodSweep("voxel", [0.3])], trials_per_setting=3)
    result = run_benchmark(cfg)
    raw = read_raw(result)
    for s in summarize(result):
        if s["group"] == "method":
            sel = [r for r in raw if r["method"] == s["method"] and s["pair"] in ("all", r["pair"])]
        else:
            sel = [r for r in raw if r["method"] == s["method"] and int(math.floor(math.log10(int(r["reference_points"])))) == s["decade"]]
        assert s["n"] == len(sel)
        assert s["median_eps_t"] == pytest.approx(np.median([float(r["eps_t"]) for r in sel]), rel=1e-15)
        assert s["median_eps_r_deg"] == pytest.approx(np.median([float(r["eps_r_deg"]) for r in sel]), rel=1e-15)


def test_parallel_matches_serial(pair):
    cfg = BenchConfig([pair], [MethodSweep("random", [0.5]), MethodSweep("octree", [4])], trials_per_setting=2)
    assert run_benchmark(cfg, jobs=2).raw_csv() == run_benchmark(cfg, jobs=1).raw_csv()


def test_outputs_written(tmp_path, pair):
    cfg = BenchConfig(
        [pair], [MethodSweep("spdf", [0.5], options={"sigma": 0.2}), MethodSweep("random", [0.5])], trials_per_setting=1
    )
    result = run_benchmark(cfg)
    write_outputs(result, tmp_path)
    for name in ("raw.csv", "summary.csv", "histograms.csv", "timings.csv"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "raw.csv").read_text().splitlines()[0]
    assert header == ",".join(RAW_FIELDS)
    hist = list(csv.DictReader(open(tmp_path / "histograms.csv")))
    assert hist and {h["saliency"] for h in hist} == {"surfaceness", "curveness", "pointness"}


def test_load_config_with_files(tmp_path, pair):
    save_cloud(pair.reading, tmp_path / "read.csv")
    save_cloud(pair.reference, tmp_path / "ref.ply")
    doc = {
        "master_seed": 9,
        "trials_per_setting": 2,
        "perturbation": {"translation": 0.3, "rotation_deg": 10},
        "icp": {"max_iterations": 20},
        "pairs": [
            {"name": "files", "reading": "read.csv", "reference": "ref.ply", "ground_truth": pair.ground_truth.matrix().tolist()},
            {"name": "synth", "synth": {"scene": "plane", "n": 500, "noise_sigma": 0.0, "seed": 1}},
        ],
        "methods": [
            {"method": "voxel", "range": {"start": 0.5, "stop": 0.1, "num": 3, "scale": "log"}},
            {"method": "spatial_spdf", "rho": 0.5, "budgets": [500]},
        ],
    }
    path = tmp_path / "bench.yaml"
    path.write_text(yaml.safe_dump(doc))
    cfg = load_config(path)
    assert cfg.master_seed == 9 and cfg.trials_per_setting == 2
    assert cfg.perturbation.rotation_magnitude == pytest.approx(math.radians(10))
    assert cfg.icp.max_iterations == 20
    assert np.allclose(cfg.pairs[0].ground_truth.matrix(), pair.ground_truth.matrix())
    assert np.array_equal(cfg.pairs[0].reading.points, pair.reading.points)
    assert cfg.methods[0].parameters == pytest.approx([0.5, math.sqrt(0.05), 0.1])
    assert cfg.methods[1].budgets == [500] and cfg.methods[1].options == {"rho": 0.5}
