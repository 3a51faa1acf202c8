import json

import numpy as np
import pytest

from arml.config import ConfigError, config_from_dict
from arml.harness import (build_experiment, read_metrics_csv,
                          rerun_from_manifest, run_experiment, run_grid_search,
                          run_noise_diagnostic, write_metrics_csv)
from arml.trainer import MetricsRecord, NumericError


def gaussian_config(name="exp", iterations=150, seed=4, **trainer_overrides):
    trainer = {"iterations": iterations, "mode": "alg1",
               "lr_schedule": [[0, 0.05]], "weight_lr": 0.002,
               "convergence_window": 30, "max_stage1_iters": 100, "seed": seed}
    trainer.update(trainer_overrides)
    return config_from_dict({
        "name": name,
        "trainer": trainer,
        "reweighter": {"kind": "arml"},
        "tasks": {"kind": "gaussian_family",
                  "aux_centers": [[2.0, 0.0], [-2.0, 0.0]],
                  "covariance": 1.0,
                  "p_star_mean": [0.5, 0.0]},
    })


def relevance_config(name="rel", reweighter=None, iterations=250, seed=3):
    return config_from_dict({
        "name": name,
        "trainer": {"iterations": iterations, "mode": "alg2", "langevin": False,
                    "lr_schedule": [[0, 2e-4]], "weight_lr": 5e-7, "seed": seed},
        "reweighter": reweighter or {"kind": "arml", "snapshot_ema": 0.9},
        "tasks": {"kind": "relevance_benchmark", "num_features": 4,
                  "main_n": 16, "val_n": 64, "noise_std": 0.5,
                  "aux": [{"n": 60, "relevance": 1.0},
                          {"n": 60, "relevance": 0.0}]},
    })


class TestMetricsCsv:
    def make_records(self, k=2, rows=3):
        out = []
        for t in range(1, rows + 1):
            out.append(MetricsRecord(
                iteration=t, stage="sampling", main_loss=0.5 / t,
                aux_losses=tuple(0.1 * t + 0.01 * i for i in range(k)),
                alpha=tuple(1.0 + (0.1 if i == 0 else -0.1) for i in range(k)),
                arml_objective=2.0 * t, grad_norm_main=3.0 / t))
        return out

    def test_header_and_row_count(self, tmp_path):
        path = tmp_path / "m.csv"
        write_metrics_csv(self.make_records(), path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 4
        assert lines[0] == ("iter,stage,main_loss,aux_loss_1,aux_loss_2,"
                            "alpha_1,alpha_2,arml_obj,grad_norm_main")

    def test_round_trip_is_exact(self, tmp_path):
        records = self.make_records(k=3, rows=5)
        path = tmp_path / "m.csv"
        write_metrics_csv(records, path)
        assert read_metrics_csv(path) == records

    def test_empty_records_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no metrics"):
            write_metrics_csv([], tmp_path / "m.csv")


class TestRunExperiment:
    def test_artifacts_and_simplex_rows(self, tmp_path):
        cfg = gaussian_config()
        art = run_experiment(cfg, out_dir=tmp_path / "run")
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert (tmp_path / "run" / "manifest.json").exists()
        assert (tmp_path / "run" / "final_weights.json").exists()
        records = read_metrics_csv(art.metrics_path)
        assert len(records) == 150
        iters = [r.iteration for r in records]
        assert iters == sorted(iters)
        for rec in records:
            alpha = np.array(rec.alpha)
            assert alpha.min() >= 0.0
            assert abs(alpha.sum() - 2.0) <= 1e-9

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = gaussian_config()
        a = run_experiment(cfg, out_dir=tmp_path / "a")
        b = run_experiment(cfg, out_dir=tmp_path / "b")
        assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()

    def test_rerun_from_manifest_alone(self, tmp_path):
        cfg = gaussian_config()
        a = run_experiment(cfg, out_dir=tmp_path / "a")
        b = rerun_from_manifest(tmp_path / "a" / "manifest.json",
                                out_dir=tmp_path / "b")
        assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["seed"] == cfg.trainer.seed
        assert manifest["kernel_backend"] in ("python", "cython")
        assert manifest["config"]["name"] == cfg.name

    def test_gnuplot_script_emitted_on_request(self, tmp_path):
        run_experiment(gaussian_config(), out_dir=tmp_path / "run", gnuplot=True)
        script = (tmp_path / "run" / "metrics.gp").read_text(encoding="utf-8")
        assert "metrics.csv" in script
        assert "alpha_2" in script

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ARML_OUT_DIR", str(tmp_path / "root"))
        art = run_experiment(gaussian_config(name="envrun"))
        assert art.run_dir == tmp_path / "root" / "envrun"
        assert art.metrics_path.exists()

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_numeric_abort_is_recorded_in_manifest(self, tmp_path):
        cfg = relevance_config(reweighter={"kind": "uniform"})
        cfg.trainer.lr_schedule = ((0, 1e9),)
        with pytest.raises(NumericError) as err:
            run_experiment(cfg, out_dir=tmp_path / "boom")
        manifest = json.loads((tmp_path / "boom" / "manifest.json").read_text())
        assert manifest["aborted_at"] == err.value.iteration

    def test_validation_loss_uses_held_out_data(self, tmp_path):
        cfg = relevance_config()
        art = run_experiment(cfg, out_dir=tmp_path / "run")
        assert np.isfinite(art.manifest["validation_loss"])

    def test_grid_config_refused(self, tmp_path):
        cfg = relevance_config(reweighter={"kind": "grid",
                                           "candidates": [[1.0, 1.0]]})
        with pytest.raises(ConfigError, match="grid"):
            run_experiment(cfg, out_dir=tmp_path / "run")


class TestGridSearch:
    CANDIDATES = [[2.0, 0.0], [1.5, 0.5], [1.0, 1.0], [0.5, 1.5], [0.0, 2.0]]

    def grid_config(self, name="grid"):
        return relevance_config(name=name, reweighter={
            "kind": "grid", "candidates": self.CANDIDATES}, iterations=120)

    def test_one_child_run_per_candidate_plus_selection(self, tmp_path):
        selection = run_grid_search(self.grid_config(), out_dir=tmp_path / "g")
        for i in range(5):
            child = tmp_path / "g" / f"candidate_{i}"
            assert (child / "metrics.csv").exists()
            assert (child / "manifest.json").exists()
        recorded = json.loads((tmp_path / "g" / "selection.json").read_text())
        assert recorded["winner_index"] == selection["winner_index"]
        scores = selection["scores"]
        assert len(scores) == 5
        assert selection["winner_index"] == int(np.argmin(scores))
        assert selection["candidates"][selection["winner_index"]] == \
            selection["winner_alpha"]

    def test_parallel_selection_matches_sequential(self, tmp_path):
        seq = run_grid_search(self.grid_config("seq"), out_dir=tmp_path / "s",
                              jobs=1)
        par = run_grid_search(self.grid_config("par"), out_dir=tmp_path / "p",
                              jobs=2)
        assert seq["winner_index"] == par["winner_index"]
        assert seq["scores"] == par["scores"]


class TestNoiseDiagnosticRun:
    def test_minibatch_config_reports_positive_noise(self):
        cfg = relevance_config()
        cfg.trainer.batch_size_main = 8
        cfg.trainer.batch_size_aux = 8
        report = run_noise_diagnostic(cfg, n_batches=16)
        assert report.grad_noise_std > 0
        assert report.injected_noise_std == pytest.approx(
            np.sqrt(2 * cfg.trainer.lr_at(1)), abs=1e-15)


class TestBuildExperiment:
    def test_gaussian_family_with_dataset_main(self):
        cfg = config_from_dict({
            "name": "g", "trainer": {"iterations": 5},
            "tasks": {"kind": "gaussian_family",
                      "aux_centers": [[1.0], [-1.0]], "covariance": 0.5,
                      "p_star_mean": [0.2],
                      "main": {"model": "linear_regression", "n": 12,
                               "noise_std": 0.3}},
        })
        built = build_experiment(cfg)
        assert built.main.dataset.n == 12
        assert built.family is not None
        assert len(built.aux) == 2

    def test_mixed_mlp_rejected(self):
        cfg = config_from_dict({
            "name": "m", "trainer": {"iterations": 5},
            "tasks": {"kind": "datasets",
                      "main": {"model": "mlp", "hidden": [3], "noise_std": 1.0,
                               "data": {"generator": {"kind": "regression",
                                                      "n": 8, "num_features": 2}}},
                      "aux": [{"model": "linear_regression", "noise_std": 1.0,
                               "data": {"generator": {"kind": "regression",
                                                      "n": 8,
                                                      "num_features": 2}}}]},
        })
        with pytest.raises(ConfigError, match="mixed"):
            build_experiment(cfg)

    def test_mlp_family_shares_trunk(self):
        cfg = config_from_dict({
            "name": "m", "trainer": {"iterations": 5},
            "tasks": {"kind": "datasets",
                      "main": {"model": "mlp", "hidden": [4], "noise_std": 1.0,
                               "data": {"generator": {"kind": "regression",
                                                      "n": 10,
                                                      "num_features": 3}}},
                      "aux": [{"model": "mlp", "hidden": [4], "noise_std": 1.0,
                               "data": {"generator": {"kind": "regression",
                                                      "n": 12,
                                                      "num_features": 3}}}]},
        })
        built = build_experiment(cfg)
        assert built.main.head_id == 0
        assert built.aux[0].head_id == 1
        assert built.main.layout is built.aux[0].layout
