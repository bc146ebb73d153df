import csv
import math
import pathlib

import pytest

import tedge

ROOT = pathlib.Path(__file__).resolve().parents[2]


def test_pmf_normalised():
    p = tedge.mzipf_pmf(2, 1.0)
    assert p == pytest.approx([2 / 3, 1 / 3], abs=1e-15)
    assert math.fsum(tedge.mzipf_pmf(500, 0.8, 2.0)) == pytest.approx(1.0, abs=1e-12)


def test_labels_and_gaf():
    history = [[1, 9], [5, 1], [8, 0], [9, 1]]
    assert tedge.label_top_k(history, 1) == [1, 0]
    image = tedge.gaf_encode([3.0, 8.0])
    assert image[0][1] == pytest.approx(-1.0)
    assert image[0][1] == image[1][0]


def test_presets():
    assert tedge.preset_model(7)["mlp_layers"] == 3
    with pytest.raises(ValueError):
        tedge.preset_model(6)


def test_cache_policies():
    scan = [1, 2, 3, 4, 5] * 20
    assert tedge.simulate_reactive(scan, "lru", 4)["hits"] == 0
    assert tedge.simulate_reactive([2] * 10, "lfu", 1)["hits"] == 9
    assert tedge.simulate_optimal(scan, 5, 10)["hit_ratio"] == 1.0


def test_toy_pipeline(tmp_path):
    config = ROOT / "configs" / "toy.json"
    for stage in ["gen-trace", "prepare", "train", "simulate", "report"]:
        tedge.run_stage(stage, config, tmp_path, ["training.epochs=1"])
    with open(tmp_path / "results.csv") as f:
        rows = {r["policy"]: r for r in csv.DictReader(f)}
    assert {"lru", "optimal", "tedge"} <= rows.keys()
    for r in rows.values():
        assert int(r["hits"]) + int(r["misses"]) == int(r["events"])
