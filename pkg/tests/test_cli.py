from __future__ import annotations

import csv
import json
import shutil

import pytest

from amdm import RunConfig
from amdm.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("simulate", "--out", out, "--seeds", "1..2") == 0
    assert run("monitor", "--out", out) == 0
    assert run("evaluate", "--out", out) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_pipeline_outputs(pipeline):
    for name in ("config.json", "streams/seed1.jsonl", "monitored/seed2.jsonl", "summary.csv",
                 "roc.csv", "pr.csv", "attribution.csv"):
        assert (pipeline / name).is_file(), name
    rows = read_csv(pipeline / "summary.csv")
    assert len(rows) == 16
    assert {r["detector"] for r in rows} == {"static", "ewma-only", "mahalanobis-only", "amdm"}
    assert all(r["runs"] == "2" for r in rows)
    cfg = json.loads((pipeline / "config.json").read_text())
    assert cfg["seeds"] == [1, 2] and "out" not in cfg


def test_recorded_decisions_match_recomputation(pipeline, tmp_path):
    # evaluate on raw streams recomputes every detector
    fresh = tmp_path / "fresh"
    shutil.copytree(pipeline / "streams", fresh / "streams")
    shutil.copy(pipeline / "config.json", fresh / "config.json")
    assert run("evaluate", "--out", fresh) == 0
    for name in ("summary.csv", "roc.csv", "pr.csv"):
        assert (fresh / name).read_text() == (pipeline / name).read_text()
    # recorded shares are renormalised, so attribution agrees to rounding
    a, b = read_csv(fresh / "attribution.csv"), read_csv(pipeline / "attribution.csv")
    assert [r["anomaly"] for r in a] == [r["anomaly"] for r in b]
    for ra, rb in zip(a, b):
        for key in ("capability", "robustness", "safety", "human", "economic"):
            assert float(ra[key]) == pytest.approx(float(rb[key]), rel=1e-12)


def test_byte_identical_reruns(pipeline, tmp_path):
    other = tmp_path / "again"
    assert run("simulate", "--out", other, "--seeds", "1..2") == 0
    assert run("monitor", "--out", other) == 0
    assert run("evaluate", "--out", other) == 0
    for name in ("streams/seed1.jsonl", "monitored/seed1.jsonl", "monitored/seed2.jsonl",
                 "summary.csv", "roc.csv", "pr.csv", "attribution.csv", "config.json"):
        assert (other / name).read_bytes() == (pipeline / name).read_bytes(), name


def test_plot_is_deterministic(pipeline, tmp_path):
    pytest.importorskip("matplotlib")
    assert run("plot", "--out", pipeline) == 0
    first = {n: (pipeline / n).read_bytes() for n in ("roc.svg", "pr.svg", "latency.svg")}
    assert run("plot", "--out", pipeline) == 0
    assert all((pipeline / n).read_bytes() == b for n, b in first.items())


def test_detector_subset(pipeline, tmp_path):
    out = tmp_path / "sub"
    assert run("evaluate", "--config", pipeline / "config.json", "--out", out,
               "--detectors", "amdm", pipeline / "monitored" / "seed1.jsonl") == 0
    rows = read_csv(out / "summary.csv")
    assert len(rows) == 4 and {r["detector"] for r in rows} == {"amdm"}


def test_malformed_stream_exit_code(pipeline, tmp_path, caplog):
    lines = (pipeline / "streams" / "seed1.jsonl").read_text().splitlines()
    lines[41] = lines[41][:-5]
    bad = tmp_path / "seed1.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert run("evaluate", "--out", tmp_path / "o", "--seed", "1", bad) == 3
    assert "line 42" in caplog.text


def test_usage_errors(tmp_path):
    assert run("evaluate", "--out", tmp_path, "--detectors", ",") == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"amdm": {"k": -1}}')
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("nonsense")
    assert exc.value.code == 2


def test_missing_inputs_exit_code(tmp_path):
    assert run("monitor", "--out", tmp_path / "empty") == 5


def test_calibrate(tmp_path):
    assert run("calibrate", "--out", tmp_path, "--seed", "3") == 0
    rep = json.loads((tmp_path / "calibration.json").read_text())
    assert rep["recommended_k"] > 0 and abs(rep["joint_threshold"] - 15.0863) < 1e-4
    assert run("calibrate", "--out", tmp_path, "--target-fpr", "0") == 4


def test_calibrate_rejects_anomalous_stream(pipeline, tmp_path):
    code = run("calibrate", "--out", tmp_path, pipeline / "streams" / "seed1.jsonl")
    assert code == 3


def test_no_injection_stream(tmp_path):
    cfg = RunConfig.from_dict({"scenario": {"name": "quiet", "length": 1200}, "seeds": [5]})
    path = tmp_path / "config.json"
    path.write_text(cfg.to_json(include_out=False))
    assert run("simulate", "--config", path, "--out", tmp_path) == 0
    assert run("evaluate", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "summary.csv")
    assert len(rows) == 4
    for r in rows:
        assert r["anomaly"] == "none" and r["detected"] == "0" and r["latency_mean_s"] == ""
        assert r["fpr_per_step"] != ""
    assert read_csv(tmp_path / "roc.csv") == []


def test_config_command(capsys, tmp_path):
    assert run("config", "--detectors", "amdm,static") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["detectors"] == ["amdm", "static"] and "out" not in doc
