import json
from pathlib import Path

import pytest

from agbp.cli import main

DATA = Path(__file__).resolve().parents[1] / "data"
SAMPLE = ["--matrix", str(DATA / "sample_model.mtx"), "--observations", str(DATA / "sample_observations.csv"),
          "--partition", str(DATA / "sample_partition.csv")]

SMALL_GENERATOR = {"cluster_count": 2, "rows_per_cluster": 10, "cols_per_cluster": 10,
                   "internal_edges": 30, "tie_edges": 3, "diagonal_increment": 0.01}


def _write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def test_generate_then_run(tmp_path, capsys):
    spec = _write_json(tmp_path / "gen.json", SMALL_GENERATOR)
    model_dir = tmp_path / "model"
    assert main(["generate", "--config", spec, "--seed", "3", "--out", str(model_dir), "--quiet"]) == 0
    for name in ["model.mtx", "observations.csv", "partition.csv", "classification.csv"]:
        assert (model_dir / name).exists()

    run_dir = tmp_path / "run"
    argv = ["run", "--matrix", str(model_dir / "model.mtx"), "--observations", str(model_dir / "observations.csv"),
            "--partition", str(model_dir / "partition.csv"), "--out", str(run_dir), "--quiet"]
    capsys.readouterr()
    assert main(argv) == 0
    printed = json.loads(capsys.readouterr().out)
    saved = json.loads((run_dir / "run_summary.json").read_text())
    assert printed == saved
    assert saved["converged"] and saved["schedule"] == "synchronous"
    assert saved["rmse_final"] <= 1e-5


def test_run_alternating_from_config(tmp_path, capsys):
    config = _write_json(tmp_path / "run.json", {
        "schedule": {"kind": "alternating", "global_iterations": 1, "local_iterations": 5},
        "oracle": False,
    })
    trace = tmp_path / "trace.csv"
    assert main(["run", "--config", config, "--tol", "1e-9", "--trace", str(trace), "--quiet"] + SAMPLE) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["converged"] and summary["nu_l"] == 5
    assert summary["nu"] == summary["nu_s"] * 6
    assert trace.read_text().startswith("iteration,edge_kind,factor,variable,mean,variance")


def test_sweep_is_deterministic(tmp_path):
    config = _write_json(tmp_path / "sweep.json", {
        "scenarios": [{"name": "small", "generator": SMALL_GENERATOR}],
        "schedules": {"global_iterations": [1], "local_iterations": [2, 4]},
        "repetitions": 2,
    })
    for name in ["a", "b"]:
        assert main(["sweep", "--config", config, "--seed", "42", "--out", str(tmp_path / name), "--quiet"]) == 0
    for csv_name in ["sweep_records.csv", "sweep_summary.csv"]:
        first = (tmp_path / "a" / csv_name).read_bytes()
        assert first == (tmp_path / "b" / csv_name).read_bytes()
    rows = (tmp_path / "a" / "sweep_records.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2
    assert rows[1].startswith("small/g1-l2,42,")


def test_analyze_sdd_instance(capsys):
    assert main(["analyze", "--config", str(DATA / "sdd.json"), "--quiet"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["rho"] < 1.0 and report["converges_predicted"]
    assert report["fixed_point_rmse_vs_wls"] < 1e-6


def test_analyze_model_files(capsys):
    assert main(["analyze", "--quiet"] + SAMPLE) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["d"] == 20


def test_dynamic_sample(tmp_path, capsys):
    argv = ["dynamic", "--config", str(DATA / "dynamic.json"), "--events", str(DATA / "sample_events.csv"),
            "--out", str(tmp_path), "--quiet"] + SAMPLE
    assert main(argv) == 0
    results = json.loads(capsys.readouterr().out)
    # initial run, two event times and two aging checkpoints
    assert len(results) == 5
    assert all(r["converged"] for r in results)
    assert (tmp_path / "dynamic_results.json").exists()


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["sweep", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    config = _write_json(tmp_path / "bad.json", {"scenarios": [], "repetitions": 0})
    assert main(["sweep", "--config", config]) == 1
    assert "bad.json" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["bogus"], ["run", "--bogus"], [], ["run", "--tol", "abc"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_matrix_needs_observations(capsys):
    assert main(["run", "--matrix", str(DATA / "sample_model.mtx")]) == 1


def test_malformed_observations(tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    obs.write_text("row,z,v\n0,1,1\n1,1,0\n2,1,1\n3,1,1\n4,1,1\n5,1,1\n")
    argv = ["run", "--matrix", str(DATA / "sample_model.mtx"), "--observations", str(obs)]
    assert main(argv) == 1
    assert f"{obs}:3" in capsys.readouterr().err


def test_underdetermined_model_is_a_runtime_failure(tmp_path, capsys):
    matrix = tmp_path / "h.mtx"
    matrix.write_text("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n1 2 1\n2 1 1\n")
    obs = tmp_path / "obs.csv"
    obs.write_text("row,z,v\n0,1,1\n1,1,1\n")
    assert main(["run", "--matrix", str(matrix), "--observations", str(obs), "--quiet"]) == 2
    assert "underdetermined" in capsys.readouterr().err


def test_truncated_matrix_header_is_a_parse_error(tmp_path, capsys):
    matrix = tmp_path / "h.mtx"
    matrix.write_text("%%MatrixMarket matrix coordinate\n2 2 2\n1 1 1\n2 2 1\n")
    obs = tmp_path / "obs.csv"
    obs.write_text("row,z,v\n0,1,1\n1,1,1\n")
    assert main(["run", "--matrix", str(matrix), "--observations", str(obs), "--quiet"]) == 1
    assert f"{matrix}:1" in capsys.readouterr().err
