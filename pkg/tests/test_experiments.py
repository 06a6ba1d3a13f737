import csv

import numpy as np
import pytest
from pydantic import ValidationError

from agbp import experiments
from agbp.errors import AgbpError
from agbp.experiments import (
    RECORD_FIELDS,
    agbp_time,
    compute_kappa,
    compute_scale_factor,
    kappa_from_counts,
    lower_median,
    run_sweep,
    sync_time,
    trial_seed,
    write_sweep,
)
from agbp.graph import classify_factors
from agbp.schemas import AgingConfig, ExperimentConfig


def _config(**overrides):
    data = {
        "scenarios": [{
            "name": "small",
            "generator": {"cluster_count": 2, "rows_per_cluster": 10, "cols_per_cluster": 10,
                          "internal_edges": 30, "tie_edges": 3, "diagonal_increment": 0.01},
        }],
        "schedules": {"global_iterations": [1], "local_iterations": [1, 5]},
        "repetitions": 3,
        "base_seed": 7,
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def _read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestKappa:
    def test_balanced(self):
        assert kappa_from_counts([600, 600], [5, 5]) == pytest.approx(0.495868, abs=1e-6)

    def test_asymmetric(self):
        assert kappa_from_counts([900, 300], [0, 0]) == 0.75

    def test_single_cluster_warns(self, agbp_logs):
        assert kappa_from_counts([40], [0]) == 1.0
        assert "single cluster" in agbp_logs.text

    def test_no_edges(self):
        with pytest.raises(AgbpError):
            kappa_from_counts([0, 0], [0, 0])

    def test_from_classification(self, two_cluster_graph, two_cluster_partition):
        classification = classify_factors(two_cluster_graph, two_cluster_partition)
        assert compute_kappa(classification) == 6 / 20


class TestScaleFactor:
    @pytest.mark.parametrize("args, expected", [
        ((50, 10, 2, 8, 0.5), 0.0),
        ((1000, 10, 1, 9, 0.5), 95.0),
        ((100, 50, 2, 0, 0.5), 0.5),
    ])
    def test_examples(self, args, expected):
        assert compute_scale_factor(*args) == expected

    def test_negative_allowed(self):
        assert compute_scale_factor(10, 10, 1, 30, 0.5) < 0

    def test_requires_sequences(self):
        with pytest.raises(ValueError):
            compute_scale_factor(10, 0, 1, 5, 0.5)

    def test_break_even_timing(self):
        nu, nu_s, nu_g, nu_l, kappa, tau_m = 400, 12, 2, 10, 0.45, 3.0
        phi = compute_scale_factor(nu, nu_s, nu_g, nu_l, kappa)
        assert agbp_time(nu_s, nu_g, nu_l, kappa, tau_m, phi * tau_m) == pytest.approx(sync_time(nu, tau_m))
        assert agbp_time(nu_s, nu_g, nu_l, kappa, tau_m, 0.5 * phi * tau_m) < sync_time(nu, tau_m)


class TestHelpers:
    def test_lower_median(self):
        assert lower_median([3, 1, 4, 2]) == 2
        assert lower_median([5.0]) == 5.0
        assert lower_median([]) is None

    def test_trial_seed(self):
        assert trial_seed(100, 2, 3, 10) == 123

    def test_aging_config_needs_one_bound(self):
        with pytest.raises(ValidationError):
            AgingConfig(rate=1.0)
        with pytest.raises(ValidationError):
            AgingConfig(rate=1.0, saturate_at=5.0, ceiling=3.0)
        model = AgingConfig(kind="linear", rate=2.0, hold=1.0, saturate_at=4.0).model_for(0.5, arrival=2.0)
        assert (model.hold_until, model.saturate_at, model.ceiling) == (3.0, 6.0, 6.5)

    def test_config_rejects_zero_repetitions(self):
        with pytest.raises(ValidationError):
            _config(repetitions=0)


class TestSweep:
    def test_records_and_summary(self, tmp_path):
        config = _config()
        result = run_sweep(config)
        assert len(result.records) == 3 * 2
        assert [r.seed for r in result.records] == [7, 7, 8, 8, 9, 9]
        assert [r.scenario for r in result.records[:2]] == ["small/g1-l1", "small/g1-l5"]
        assert all(r.sync_converged and r.agbp_converged for r in result.records)
        assert len(result.summary) == 2
        assert result.summary[0][:4] == ["small/g1-l1", "3", "1", "1"]

        paths = write_sweep(result, tmp_path)
        assert [p.name for p in paths] == ["sweep_records.csv", "sweep_summary.csv"]
        rows = _read(paths[0])
        assert list(rows[0].keys()) == RECORD_FIELDS
        for row in rows:
            phi = compute_scale_factor(int(row["nu"]), int(row["nu_s"]), int(row["nu_g"]), int(row["nu_l"]),
                                       float(row["kappa"]))
            assert phi == float(row["phi"])
            assert float(row["rmse_agbp"]) <= 1e-5
        summary_lines = paths[1].read_text().splitlines()
        assert summary_lines[0].startswith("# median: lower")

    def test_single_repetition_median_is_the_value(self):
        result = run_sweep(_config(repetitions=1))
        for record, row in zip(result.records, result.summary):
            assert row[4] == format(record.phi, ".17g")

    def test_deterministic_output(self, tmp_path):
        first = write_sweep(run_sweep(_config()), tmp_path / "a")
        second = write_sweep(run_sweep(_config()), tmp_path / "b")
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_worker_pool_matches_serial(self, tmp_path):
        serial = write_sweep(run_sweep(_config()), tmp_path / "serial")
        pooled = write_sweep(run_sweep(_config(workers=2)), tmp_path / "pooled")
        for a, b in zip(serial, pooled):
            assert a.read_bytes() == b.read_bytes()

    def test_failed_trial_is_recorded(self, monkeypatch):
        def boom(graph, config=None):
            raise AgbpError("synthetic failure")

        monkeypatch.setattr(experiments, "run_synchronous", boom)
        result = run_sweep(_config(repetitions=1))
        assert len(result.records) == 2
        assert all(not r.sync_converged and not r.agbp_converged and r.phi is None for r in result.records)
        assert result.summary[0][2] == "0"

    def test_perturbation_scenario(self, tmp_path):
        config = _config(scenarios=[{
            "name": "perturbed",
            "generator": {"cluster_count": 2, "rows_per_cluster": 10, "cols_per_cluster": 10,
                          "internal_edges": 30, "tie_edges": 3, "diagonal_increment": 0.01},
            "mode": "perturbation",
            "perturbation_probability": 0.2,
        }], repetitions=2)
        result = run_sweep(config)
        assert len(result.dynamic) == 4
        assert all(d.mode == "perturbation" and d.warm_converged and d.cold_converged for d in result.dynamic)
        paths = write_sweep(result, tmp_path)
        assert paths[-1].name == "sweep_dynamic.csv"
        assert len(_read(paths[-1])) == 4

    def test_aging_scenario(self):
        config = _config(scenarios=[{
            "name": "aged",
            "generator": {"cluster_count": 2, "rows_per_cluster": 10, "cols_per_cluster": 10,
                          "internal_edges": 30, "tie_edges": 3, "diagonal_increment": 0.01},
            "mode": "aging",
            "perturbation_probability": 0.5,
            "aging": {"kind": "logarithmic", "rate": 2.0, "shape": 0.5, "saturate_at": 20.0, "rows": "all"},
        }], repetitions=1)
        result = run_sweep(config)
        assert len(result.dynamic) == 2
        assert all(d.mode == "aging" and d.changed > 0 for d in result.dynamic)
        assert all(np.isfinite(d.warm_nu_s) for d in result.dynamic if d.warm_converged)
