"""Orchestration: config parsing, determinism, CSV/manifest emission, CLI."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from advrisk import cli, experiment
from advrisk.errors import ConfigError


BASE_CONFIG = """
[problem]
p = 2
delta = 1.0
eps0 = 0.2
loss = logistic
mean_scale = 1.0

[sweep]
variable = eps0
values = 0, 0.2

[solver]
gh_order = 48

[simulation]
d = 60
trials = 3
budget = 3000

[output]
prefix = t
"""


def write_config(tmp_path, text=BASE_CONFIG, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseConfig:
    def test_roundtrip(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        assert cfg.p == 2.0
        assert cfg.sweep_values == [0.0, 0.2]
        assert cfg.d == 60 and cfg.trials == 3

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            experiment.parse_config("/nonexistent/path.ini")

    def test_bad_values(self, tmp_path):
        bad = BASE_CONFIG.replace("delta = 1.0", "delta = -2")
        with pytest.raises(ConfigError):
            experiment.parse_config(write_config(tmp_path, bad))
        bad = BASE_CONFIG.replace("p = 2", "p = 0.3")
        with pytest.raises(ConfigError):
            experiment.parse_config(write_config(tmp_path, bad))
        bad = BASE_CONFIG.replace("variable = eps0", "variable = bananas")
        with pytest.raises(ConfigError):
            experiment.parse_config(write_config(tmp_path, bad))

    def test_inf_p(self, tmp_path):
        cfg = experiment.parse_config(
            write_config(tmp_path, BASE_CONFIG.replace("p = 2", "p = inf"))
        )
        assert cfg.p == np.inf


class TestPredictCommand:
    def test_zero_budget_row_equalizes(self, tmp_path):
        text = BASE_CONFIG.replace("values = 0, 0.2", "values = 0")
        cfg = experiment.parse_config(write_config(tmp_path, text))
        table = experiment.run_predict(cfg)
        row = table.rows[0]
        assert row["sa_theory"] == row["ra_theory"]

    def test_byte_identical_over_invocations(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        a = experiment.run_predict(cfg).to_csv()
        b = experiment.run_predict(cfg).to_csv()
        assert a == b

    def test_csv_golden_layout(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        csv = experiment.run_predict(cfg).to_csv()
        header, first, *_ = csv.splitlines()
        assert header == ",".join(experiment.CSV_COLUMNS)
        cells = dict(zip(header.split(","), first.split(",")))
        assert cells["regime"] == "separable"
        # delta* for the budget-free Euclidean instance (frozen)
        assert float(cells["delta_star"]) == pytest.approx(3.7000334557, rel=1e-6)
        assert cells["sa_emp_mean"] == ""


class TestSimulateCommand:
    def test_reproducible_and_eps0_zero_equal(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        t1 = experiment.run_simulate(cfg, seed=5)
        t2 = experiment.run_simulate(cfg, seed=5)
        assert t1.to_csv() == t2.to_csv()
        row0 = t1.rows[0]
        assert row0["sa_emp_mean"] == row0["ra_emp_mean"]
        assert row0["n_trials"] == 3

    def test_seed_changes_output(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        t1 = experiment.run_simulate(cfg, seed=5)
        t2 = experiment.run_simulate(cfg, seed=6)
        assert t1.to_csv() != t2.to_csv()

    def test_worker_count_invariance(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        t1 = experiment.run_simulate(cfg, seed=3, workers=1)
        t2 = experiment.run_simulate(cfg, seed=3, workers=3)
        assert t1.to_csv() == t2.to_csv()


class TestThresholdCommand:
    def test_multi_norm_table(self, tmp_path):
        text = BASE_CONFIG.replace("p = 2", "p = 1, 2, inf").replace(
            "values = 0, 0.2", "values = 0, 0.25"
        )
        cfg = experiment.parse_config(write_config(tmp_path, text))
        table = experiment.run_threshold(cfg)
        rows = table.rows
        assert len(rows) == 6
        at_zero = [r["delta_star"] for r in rows if r["eps0"] == 0]
        assert max(at_zero) - min(at_zero) < 1e-6
        for p in ("1.0", "2.0", "inf"):
            col = [r["delta_star"] for r in rows if str(r["p"]) == p]
            assert col == sorted(col, reverse=True)

    def test_vanishing_signal_anchor(self, tmp_path):
        text = BASE_CONFIG.replace("mean_scale = 1.0", "mean_scale = 1e-6").replace(
            "values = 0, 0.2", "values = 0"
        )
        cfg = experiment.parse_config(write_config(tmp_path, text))
        table = experiment.run_threshold(cfg)
        assert table.rows[0]["delta_star"] == pytest.approx(2.0, abs=1e-3)


class TestCompareCommand:
    def test_self_join_zero_deviation(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        table = experiment.run_predict(cfg)
        theory_csv = tmp_path / "theory.csv"
        theory_csv.write_text(table.to_csv())
        # fabricate an empirical table that copies the theory values
        fake = experiment.SweepTable(rows=[dict(r) for r in table.rows], manifest={})
        for r in fake.rows:
            r["sa_emp_mean"] = r["sa_theory"]
            r["ra_emp_mean"] = r["ra_theory"]
            r["sa_emp_stderr"] = 0.0
            r["ra_emp_stderr"] = 0.0
            r["sep_fraction"] = 1.0
            r["n_trials"] = 1
        emp_csv = tmp_path / "emp.csv"
        emp_csv.write_text(fake.to_csv())
        text = BASE_CONFIG + f"\n[compare]\ntheory_csv = {theory_csv}\nempirical_csv = {emp_csv}\n"
        cfg2 = experiment.parse_config(write_config(tmp_path, text, "cmp.ini"))
        merged, summary, ok = experiment.run_compare(cfg2)
        assert ok
        assert summary["max_dev_sa"] == 0.0

    def test_corrupted_empirical_breaches_tolerance(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        table = experiment.run_predict(cfg)
        theory_csv = tmp_path / "theory.csv"
        theory_csv.write_text(table.to_csv())
        fake = experiment.SweepTable(rows=[dict(r) for r in table.rows], manifest={})
        for r in fake.rows:
            r["sa_emp_mean"] = float(r["sa_theory"]) - 0.25  # corrupted
            r["ra_emp_mean"] = r["ra_theory"]
        emp_csv = tmp_path / "emp.csv"
        emp_csv.write_text(fake.to_csv())
        text = BASE_CONFIG + f"\n[compare]\ntheory_csv = {theory_csv}\nempirical_csv = {emp_csv}\n"
        cfg2 = experiment.parse_config(write_config(tmp_path, text, "cmp.ini"))
        _, summary, ok = experiment.run_compare(cfg2)
        assert not ok
        assert summary["max_dev_sa"] > 0.2

    def test_mismatched_grids_rejected(self, tmp_path):
        cfg = experiment.parse_config(write_config(tmp_path))
        table = experiment.run_predict(cfg)
        theory_csv = tmp_path / "theory.csv"
        theory_csv.write_text(table.to_csv())
        other = experiment.SweepTable(rows=[dict(table.rows[0])], manifest={})
        emp_csv = tmp_path / "emp.csv"
        emp_csv.write_text(other.to_csv())
        text = BASE_CONFIG + f"\n[compare]\ntheory_csv = {theory_csv}\nempirical_csv = {emp_csv}\n"
        cfg2 = experiment.parse_config(write_config(tmp_path, text, "cmp.ini"))
        with pytest.raises(ConfigError):
            experiment.run_compare(cfg2)


class TestCli:
    def test_config_error_exit_code(self, tmp_path):
        rc = cli.main(
            ["predict", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]
        )
        assert rc == cli.EXIT_CONFIG

    def test_predict_writes_outputs(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path)
        rc = cli.main(
            ["predict", "--config", str(cfg_path), "--out", str(tmp_path / "out")]
        )
        assert rc == 0
        csv_path = tmp_path / "out" / "t_predict.csv"
        man_path = tmp_path / "out" / "t_predict.manifest.json"
        assert csv_path.exists() and man_path.exists()
        manifest = json.loads(man_path.read_text())
        assert manifest["command"] == "predict"
        assert manifest["config"]["problem"]["p"] == "2"
        assert manifest["artifact_version"]

    def test_compare_tolerance_exit_code(self, tmp_path):
        cfg_path = write_config(tmp_path)
        cfg = experiment.parse_config(cfg_path)
        table = experiment.run_predict(cfg)
        theory_csv = tmp_path / "theory.csv"
        theory_csv.write_text(table.to_csv())
        fake = experiment.SweepTable(rows=[dict(r) for r in table.rows], manifest={})
        for r in fake.rows:
            r["sa_emp_mean"] = float(r["sa_theory"]) - 0.5
            r["ra_emp_mean"] = r["ra_theory"]
        emp_csv = tmp_path / "emp.csv"
        emp_csv.write_text(fake.to_csv())
        text = BASE_CONFIG + f"\n[compare]\ntheory_csv = {theory_csv}\nempirical_csv = {emp_csv}\n"
        cfg2 = write_config(tmp_path, text, "cmp.ini")
        rc = cli.main(
            ["compare", "--config", str(cfg2), "--out", str(tmp_path / "out")]
        )
        assert rc == cli.EXIT_TOLERANCE

    def test_quadrature_env_override(self, monkeypatch):
        from advrisk import kernels

        monkeypatch.setenv("ADVRISK_QUAD_ORDER", "32")
        assert kernels.default_gh_order() == 32
        monkeypatch.setenv("ADVRISK_QUAD_ORDER", "8")
        with pytest.raises(ValueError):
            kernels.default_gh_order()
