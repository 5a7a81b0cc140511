import csv
import json
import os

import numpy as np
import pytest

from slpmm.cli import main
from slpmm.config import ConfigError, ExperimentConfig
from slpmm.harness import (TRACE_COLUMNS, emit_plotdata, fit_rate, read_trace_csv,
                           run_experiment)


def qcqp_config(out, K=20, seeds=(0,), **extra):
    return ExperimentConfig("qcqp", problem={"n": 6, "p": 2}, solver={"iterations": K},
                            seeds=list(seeds), validation_samples=2000, output=str(out),
                            deterministic_time=True, **extra)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def snapshot(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for name in files:
            path = os.path.join(root, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, directory)] = fh.read()
    return out


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig("ssd", problem={"scenarios": 100, "upper": 0.5},
                               solver={"iterations": 10, "subset_size": 3}, seeds=[1, 2],
                               validation_samples="full", output=str(tmp_path))
        again = ExperimentConfig.loads(cfg.dumps())
        assert again == cfg
        assert again.dumps() == cfg.dumps()

    @pytest.mark.parametrize("text", [
        "family: qcqp\nsolver: {iterations: 5}\nbogus: 1\n",
        "family: qcqp\nproblem: {dimension: 5}\nsolver: {iterations: 5}\n",
        "family: qcqp\nsolver: {iterations: 5, step: 2}\n",
        "family: qcqp\nsolver: {}\n",
        "family: lasso\nsolver: {iterations: 5}\n",
        "family: qcqp\nsolver: {iterations: 5}\nseeds: [1, 1]\n",
        "family: qcqp\nsolver: {iterations: 5}\nvalidation_samples: 1\n",
        "family: qcqp\nsolver: {iterations: 5}\nvalidation_samples: full\n",
        "family: qcqp\nsolver: {iterations: 5, apg_eta: 0.5}\n",
        "- just\n- a list\n",
        "family: [unclosed\n",
    ])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            ExperimentConfig.loads(text)

    def test_defaults_filled(self):
        cfg = ExperimentConfig.loads("family: np\nsolver: {iterations: 5}\n")
        params = cfg.problem_params()
        assert params["tau"] == 1.0 and params["batch_fraction"] == 0.01

    def test_overrides(self, tmp_path):
        cfg = qcqp_config(tmp_path).with_overrides(seeds=[4, 5], iterations=7)
        assert cfg.seeds == [4, 5]
        assert cfg.solver["iterations"] == 7


class TestRunExperiment:
    def test_single_iteration_single_row(self, tmp_path):
        run_experiment(qcqp_config(tmp_path, K=1))
        rows = read_rows(tmp_path / "trace_seed0.csv")
        assert rows[0] == TRACE_COLUMNS
        assert len(rows) == 2

    def test_outputs_and_summary(self, tmp_path):
        [summary] = run_experiment(qcqp_config(tmp_path, K=30))
        assert summary["status"] == "ok"
        for name in ("config.yaml", "instance.json", "trace_seed0.csv", "summary_seed0.json",
                     "aggregate.csv"):
            assert (tmp_path / name).exists()
        on_disk = json.loads((tmp_path / "summary_seed0.json").read_text())
        assert on_disk["K"] == 30
        assert "wall_time_s" not in on_disk
        assert on_disk["objective_gap_exact"] >= 0
        assert on_disk["bounds_online"]["lambda_drift"]["late_violations"] == 0
        header, data = read_trace_csv(tmp_path / "trace_seed0.csv")
        assert np.all(np.isfinite(data))
        np.testing.assert_array_equal(data[:, 0], np.arange(30))

    def test_aggregate_is_mean(self, tmp_path):
        run_experiment(qcqp_config(tmp_path, K=15, seeds=range(10)))
        tables = [read_trace_csv(tmp_path / f"trace_seed{s}.csv")[1] for s in range(10)]
        _, agg = read_trace_csv(tmp_path / "aggregate.csv")
        np.testing.assert_allclose(agg[:, 1:], np.mean(tables, axis=0)[:, 1:], rtol=0, atol=1e-12)
        np.testing.assert_array_equal(agg[:, 0], np.arange(15))

    def test_rerun_byte_identical(self, tmp_path):
        cfg = qcqp_config(tmp_path, K=25, seeds=[3, 4])
        run_experiment(cfg)
        first = snapshot(tmp_path)
        run_experiment(cfg)
        assert snapshot(tmp_path) == first

    def test_parallel_matches_serial(self, tmp_path):
        run_experiment(qcqp_config(tmp_path / "a", K=10, seeds=[1, 2]))
        run_experiment(qcqp_config(tmp_path / "b", K=10, seeds=[1, 2], workers=2))
        a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
        a.pop("config.yaml"), b.pop("config.yaml")
        assert a == b

    def test_failed_seed_recorded(self, tmp_path):
        cfg = ExperimentConfig("ssd", problem={"scenarios": 50, "level_count": 5},
                               solver={"iterations": 5, "subproblem_solver": "apg",
                                       "apg_max_iters": 1, "apg_tol": 1e-12},
                               seeds=[0, 1], output=str(tmp_path), validation_samples="full")
        summaries = run_experiment(cfg)
        assert all(s["status"] == "failed" for s in summaries)
        assert "k" in json.loads((tmp_path / "summary_seed0.json").read_text())


class TestFitRate:
    def test_exact_power_law(self):
        pts = [(K, 3.0 / np.sqrt(K)) for K in (100, 400, 1600)]
        assert fit_rate(pts) == pytest.approx(-0.5, abs=1e-12)

    def test_constant(self):
        assert fit_rate([(100, 0.2), (400, 0.2), (1600, 0.2)]) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("pts", [
        [(100, 0.1), (400, 0.0), (1600, 0.01)],
        [(100, 0.1), (400, -0.1), (1600, 0.01)],
        [(100, 0.1), (400, 0.05)],
    ])
    def test_rejects(self, pts):
        with pytest.raises(ValueError):
            fit_rate(pts)


class TestPlotData:
    def test_single_trace_series(self, tmp_path):
        run_experiment(qcqp_config(tmp_path, K=5))
        emit_plotdata([tmp_path / "trace_seed0.csv"], tmp_path / "plot")
        rows = read_rows(tmp_path / "plot" / "plot_by_iteration.csv")
        series = {r[0] for r in rows[1:]}
        assert series == {c for c in TRACE_COLUMNS if c not in ("k", "wall_time_s")}
        assert len(rows) == 1 + 5 * len(series)

    def test_mean_series(self, tmp_path):
        run_experiment(qcqp_config(tmp_path, K=8, seeds=range(10)))
        paths = [tmp_path / f"trace_seed{s}.csv" for s in range(10)]
        emit_plotdata(paths, tmp_path / "plot")
        rows = read_rows(tmp_path / "plot" / "plot_by_iteration.csv")
        mean_f = [float(r[2]) for r in rows if r[0] == "mean/F_sample"]
        expected = np.mean([read_trace_csv(p)[1][:, 1] for p in paths], axis=0)
        np.testing.assert_allclose(mean_f, expected, rtol=0, atol=1e-12)

    def test_cli_reference_line(self, tmp_path):
        run_experiment(qcqp_config(tmp_path, K=5))
        assert main(["plotdata", str(tmp_path)]) == 0
        meta = json.loads((tmp_path / "instance.json").read_text())
        ref = json.loads((tmp_path / "plot" / "reference.json").read_text())
        x_hat = np.array(meta["x_hat"])
        assert ref["objective_reference"] == pytest.approx(0.5 * x_hat @ x_hat, rel=1e-15)

    def test_np_epoch_file(self, tmp_path):
        cfg = ExperimentConfig("np", problem={"n": 4, "n_pos": 200, "n_neg": 100},
                               solver={"iterations": 5}, output=str(tmp_path),
                               validation_samples="full", deterministic_time=True)
        run_experiment(cfg)
        assert main(["plotdata", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "plot" / "plot_by_epoch.csv")
        assert float(rows[-1][1]) == pytest.approx(4 * 2 / 200)


class TestCli:
    def test_run_and_rate(self, tmp_path, capsys):
        cfg = qcqp_config(tmp_path / "base", K=10, seeds=[0, 1, 2])
        path = tmp_path / "cfg.yaml"
        path.write_text(cfg.dumps())
        assert main(["run", "--config", str(path), "--iterations", "4",
                     "--out", str(tmp_path / "run")]) == 0
        assert len(read_rows(tmp_path / "run" / "trace_seed2.csv")) == 5
        assert main(["rate", "--config", str(path), "--iterations", "10,40,160"]) == 0
        assert "slope=" in capsys.readouterr().out

    def test_family_flag(self, tmp_path):
        assert main(["run", "--family", "qcqp", "--iterations", "3", "--seed", "7",
                     "--out", str(tmp_path), "--deterministic-time"]) == 0
        assert (tmp_path / "trace_seed7.csv").exists()

    def test_validate(self, tmp_path, capsys):
        path = tmp_path / "cfg.yaml"
        path.write_text(qcqp_config(tmp_path).dumps())
        assert main(["validate", "--config", str(path), "--point", "0,0,0,0,0,0",
                     "--samples", "500"]) == 0
        est = json.loads(capsys.readouterr().out)
        assert est["samples"] == 500 and len(est["g"]) == 2

    def test_validate_rejects_infeasible_point(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(qcqp_config(tmp_path).dumps())
        assert main(["validate", "--config", str(path), "--point", "9,9,9,9,9,9"]) == 2

    def test_config_error_exit(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("family: qcqp\nsolver: {iterations: 5}\nunknown: 1\n")
        assert main(["run", "--config", str(path)]) == 2

    def test_missing_file_exit(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.yaml")]) == 4

    def test_solver_failure_exit(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(ExperimentConfig(
            "ssd", problem={"scenarios": 50, "level_count": 5},
            solver={"iterations": 5, "subproblem_solver": "apg", "apg_max_iters": 1,
                    "apg_tol": 1e-12},
            output=str(tmp_path / "out"), validation_samples="full").dumps())
        assert main(["run", "--config", str(path)]) == 3

    def test_selftest(self, capsys):
        assert main(["selftest", "--trials", "30"]) == 0
        assert "FAIL" not in capsys.readouterr().out
