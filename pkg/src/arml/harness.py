"""Run orchestration: build tasks from a config, train, persist artifacts.

Every run directory receives:

* ``metrics.csv``  - one row per iteration (17-significant-digit floats)
* ``final_weights.json``
* ``manifest.json`` - config echo + seed + code version + kernel backend;
  re-running from the manifest reproduces the metrics byte for byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import arml
from arml.backend import kernel_backend
from arml.config import ConfigError, ExperimentConfig, config_from_dict
from arml.core import ParamVector, RngState, SegmentLayout
from arml.oracle import GaussianDist, GaussianFamily
from arml.reweight import check_simplex, grid_search, make_reweighter
from arml.synth import (STREAM_DATA, generate_synthetic, planted_regression,
                        relevance_regression)
from arml.tasks import (Dataset, GaussianTask, GaussianTaskSpec,
                        LinearRegressionTask, LogisticRegressionTask, MlpTask,
                        as_covariance, load_dataset_csv)
from arml.trainer import (MetricsRecord, NumericError, TrainResult,
                          noise_diagnostic, train)

# Data-generation substreams (offsets from STREAM_DATA).
_WEIGHTS_STREAM = 50
_MAIN_STREAM = 0
_AUX_STREAM = 1  # + task index
_VAL_STREAM = 99


@dataclass
class BuiltExperiment:
    main: object
    aux: list
    layout: SegmentLayout
    family: GaussianFamily | None
    val_dataset: Dataset | None


@dataclass
class RunArtifacts:
    result: TrainResult | None
    run_dir: Path
    metrics_path: Path
    manifest: dict


def _data_rng(cfg: ExperimentConfig, offset: int) -> RngState:
    return RngState(cfg.trainer.seed, STREAM_DATA + offset)


def _load_source(source: dict, cfg: ExperimentConfig, offset: int) -> Dataset:
    if "csv" in source:
        return load_dataset_csv(source["csv"])
    data = generate_synthetic(source["generator"], _data_rng(cfg, offset))
    if not isinstance(data, Dataset):
        raise ConfigError("generator must produce a dataset here")
    return data


def build_experiment(cfg: ExperimentConfig) -> BuiltExperiment:
    tasks_spec = cfg.tasks
    kind = tasks_spec["kind"]
    if kind == "gaussian_family":
        return _build_gaussian_family(cfg)
    if kind == "relevance_benchmark":
        return _build_relevance_benchmark(cfg)
    return _build_datasets(cfg)


def _build_gaussian_family(cfg: ExperimentConfig) -> BuiltExperiment:
    spec = cfg.tasks
    centers = np.asarray(spec["aux_centers"], dtype=np.float64)
    if centers.ndim != 2:
        raise ConfigError("tasks.aux_centers must be a list of vectors")
    k, dim = centers.shape
    cov = as_covariance(np.asarray(spec["covariance"], dtype=np.float64)
                        if not isinstance(spec["covariance"], (int, float))
                        else float(spec["covariance"]), dim)
    p_star_mean = np.asarray(spec["p_star_mean"], dtype=np.float64)
    psc = spec.get("p_star_covariance", "matched")
    if isinstance(psc, str):
        p_star_cov = cov / k
    else:
        p_star_cov = as_covariance(np.asarray(psc, dtype=np.float64)
                                   if not isinstance(psc, (int, float))
                                   else float(psc), dim)
    family = GaussianFamily([GaussianTaskSpec(c, cov) for c in centers],
                            GaussianDist(p_star_mean, p_star_cov))

    layout = SegmentLayout.single_shared(dim)
    aux = [GaussianTask(s, layout) for s in family.specs]
    main_spec = spec.get("main")
    if main_spec is None:
        main = GaussianTask(GaussianTaskSpec(p_star_mean, p_star_cov), layout)
    else:
        weights = main_spec["weights"]
        weights = p_star_mean if isinstance(weights, str) else \
            np.asarray(weights, dtype=np.float64)
        ds = planted_regression(_data_rng(cfg, _MAIN_STREAM), main_spec["n"],
                                weights, main_spec["noise_std"])
        main = LinearRegressionTask(ds, layout, noise_std=main_spec["noise_std"])
    return BuiltExperiment(main, aux, layout, family, None)


def _build_relevance_benchmark(cfg: ExperimentConfig) -> BuiltExperiment:
    spec = cfg.tasks
    p = spec["num_features"]
    noise_std = spec["noise_std"]
    rng_w = _data_rng(cfg, _WEIGHTS_STREAM)
    w_true = rng_w.generator.normal(size=p) / np.sqrt(p)
    layout = SegmentLayout.single_shared(p)
    main_ds = planted_regression(_data_rng(cfg, _MAIN_STREAM),
                                 spec["main_n"], w_true, noise_std)
    main = LinearRegressionTask(main_ds, layout, noise_std=noise_std)
    aux = []
    for i, aspec in enumerate(spec["aux"]):
        ds = relevance_regression(_data_rng(cfg, _AUX_STREAM + i), aspec["n"],
                                  w_true, aspec["relevance"], noise_std)
        aux.append(LinearRegressionTask(ds, layout, noise_std=noise_std))
    val_ds = planted_regression(_data_rng(cfg, _VAL_STREAM),
                                spec["val_n"], w_true, noise_std)
    return BuiltExperiment(main, aux, layout, None, val_ds)


def _build_datasets(cfg: ExperimentConfig) -> BuiltExperiment:
    spec = cfg.tasks
    main_spec = spec["main"]
    aux_specs = spec["aux"]
    all_specs = [main_spec] + list(aux_specs)
    models = {s["model"] for s in all_specs}
    datasets = [_load_source(s["data"], cfg,
                             _MAIN_STREAM if i == 0 else _AUX_STREAM + i - 1)
                for i, s in enumerate(all_specs)]
    if "mlp" in models:
        if models != {"mlp"}:
            raise ConfigError("mlp tasks cannot be mixed with flat-weight models")
        hiddens = {tuple(s["hidden"]) for s in all_specs}
        if len(hiddens) != 1:
            raise ConfigError("all mlp tasks must share the hidden layer sizes")
        hidden = hiddens.pop()
        widths = {ds.num_features for ds in datasets}
        if len(widths) != 1:
            raise ConfigError("all datasets must share the feature count")
        p = widths.pop()
        trunk = MlpTask.trunk_size(p, hidden)
        head = MlpTask.head_size(p, hidden)
        layout = SegmentLayout.shared_with_heads(
            trunk, {i: head for i in range(len(all_specs))})
        tasks = [MlpTask(ds, layout, hidden, head_id=i,
                         noise_std=s.get("noise_std", 1.0))
                 for i, (s, ds) in enumerate(zip(all_specs, datasets))]
    else:
        widths = {ds.num_features for ds in datasets}
        if len(widths) != 1:
            raise ConfigError("flat-weight tasks must share the feature count")
        layout = SegmentLayout.single_shared(widths.pop())
        tasks = []
        for s, ds in zip(all_specs, datasets):
            if s["model"] == "linear_regression":
                tasks.append(LinearRegressionTask(ds, layout,
                                                  noise_std=s["noise_std"]))
            else:
                tasks.append(LogisticRegressionTask(ds, layout))
    val = None
    if "validation" in spec:
        val = _load_source(spec["validation"], cfg, _VAL_STREAM)
    return BuiltExperiment(tasks[0], tasks[1:], layout, None, val)


def _clone_with_dataset(task, dataset: Dataset):
    if isinstance(task, LinearRegressionTask):
        return LinearRegressionTask(dataset, task.layout, task.noise_std,
                                    task.head_id)
    if isinstance(task, LogisticRegressionTask):
        return LogisticRegressionTask(dataset, task.layout, task.head_id)
    if isinstance(task, MlpTask):
        return MlpTask(dataset, task.layout, task.hidden, task.head_id,
                       task.noise_std)
    raise TypeError(f"cannot evaluate {type(task).__name__} on held-out data")


def validation_loss(built: BuiltExperiment, result: TrainResult) -> float:
    """Mean per-example NLL on held-out data; falls back to the main task's
    own data, or the main log-density for parameter-space tasks."""
    theta = result.final_theta
    main = built.main
    if built.val_dataset is not None:
        twin = _clone_with_dataset(main, built.val_dataset)
        return -twin.log_likelihood(theta) / built.val_dataset.n
    if main.dataset is not None:
        return -main.log_likelihood(theta) / main.dataset.n
    return -main.log_likelihood(theta)


# ---------------------------------------------------------------------------
# Metrics persistence
# ---------------------------------------------------------------------------


def write_metrics_csv(records, path) -> None:
    if not records:
        raise ValueError("no metrics records to write")
    k = len(records[0].aux_losses)
    header = (["iter", "stage", "main_loss"]
              + [f"aux_loss_{i + 1}" for i in range(k)]
              + [f"alpha_{i + 1}" for i in range(k)]
              + ["arml_obj", "grad_norm_main"])
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for rec in records:
                row = ([str(rec.iteration), rec.stage, f"{rec.main_loss:.17g}"]
                       + [f"{v:.17g}" for v in rec.aux_losses]
                       + [f"{v:.17g}" for v in rec.alpha]
                       + [f"{rec.arml_objective:.17g}",
                          f"{rec.grad_norm_main:.17g}"])
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path) -> list[MetricsRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")
    k = sum(1 for name in header if name.startswith("alpha_"))
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        records.append(MetricsRecord(
            iteration=int(cells[0]),
            stage=cells[1],
            main_loss=float(cells[2]),
            aux_losses=tuple(float(c) for c in cells[3:3 + k]),
            alpha=tuple(float(c) for c in cells[3 + k:3 + 2 * k]),
            arml_objective=float(cells[3 + 2 * k]),
            grad_norm_main=float(cells[4 + 2 * k]),
        ))
    return records


def write_gnuplot_script(path, metrics_name: str, k: int) -> None:
    cols = ", ".join(f"'{metrics_name}' using 1:{4 + k + i} with lines "
                     f"title 'alpha_{i + 1}'" for i in range(k))
    text = ("set datafile separator ','\n"
            "set key autotitle columnhead\n"
            "set xlabel 'iteration'\n"
            "set ylabel 'task weight'\n"
            f"plot {cols}\n")
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Run orchestration
# ---------------------------------------------------------------------------


def resolve_run_dir(cfg: ExperimentConfig, out_dir=None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.output_dir is not None:
        return cfg.base_dir / cfg.output_dir
    root = os.environ.get("ARML_OUT_DIR", "runs")
    return Path(root) / cfg.name


def _make_reweighter(cfg: ExperimentConfig):
    spec = dict(cfg.reweighter)
    kind = spec.pop("kind")
    return make_reweighter(kind, cfg.trainer.weight_lr, **spec)


def run_experiment(cfg: ExperimentConfig, out_dir=None,
                   gnuplot: bool = False) -> RunArtifacts:
    """Train per the config and persist metrics + manifest into the run dir."""
    if cfg.reweighter["kind"] == "grid":
        raise ConfigError("grid configs run through run_grid_search")
    run_dir = resolve_run_dir(cfg, out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.csv"
    manifest = {
        "name": cfg.name,
        "seed": cfg.trainer.seed,
        "code_version": arml.__version__,
        "kernel_backend": kernel_backend(),
        "config": cfg.raw(),
        "metrics_csv": "metrics.csv",
        "aborted_at": None,
    }
    built = build_experiment(cfg)
    reweighter = _make_reweighter(cfg)
    try:
        result = train(cfg.trainer, built.main, built.aux, reweighter)
    except NumericError as exc:
        manifest["aborted_at"] = exc.iteration
        manifest["error"] = str(exc)
        _write_json(run_dir / "manifest.json", manifest)
        raise
    write_metrics_csv(result.loss_trajectory, metrics_path)
    val_loss = validation_loss(built, result)
    final_alpha = result.weight_trajectory[-1][1]
    manifest["converged_at"] = result.converged_at
    manifest["final_alpha"] = [float(a) for a in final_alpha]
    manifest["validation_loss"] = float(val_loss)
    _write_json(run_dir / "manifest.json", manifest)
    _write_json(run_dir / "final_weights.json", {
        "alpha": [float(a) for a in final_alpha],
        "converged_at": result.converged_at,
        "validation_loss": float(val_loss),
    })
    if gnuplot:
        write_gnuplot_script(run_dir / "metrics.gp", "metrics.csv",
                             len(final_alpha))
    return RunArtifacts(result, run_dir, metrics_path, manifest)


def rerun_from_manifest(manifest_path, out_dir) -> RunArtifacts:
    """Reproduce a run using nothing but its manifest."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    cfg = config_from_dict(manifest["config"],
                           base_dir=Path(manifest_path).parent)
    return run_experiment(cfg, out_dir=out_dir)


def _candidate_config(cfg: ExperimentConfig, alpha) -> ExperimentConfig:
    raw = cfg.raw()
    raw["reweighter"] = {"kind": "fixed", "alpha": [float(a) for a in alpha]}
    raw.pop("output_dir", None)
    return config_from_dict(raw, base_dir=cfg.base_dir)


def _run_candidate(args):
    raw, base_dir, child_dir = args
    cfg = config_from_dict(raw, base_dir=Path(base_dir))
    artifacts = run_experiment(cfg, out_dir=child_dir)
    return artifacts.manifest["validation_loss"]


def run_grid_search(cfg: ExperimentConfig, out_dir=None, jobs: int = 1) -> dict:
    """One child run per candidate; winner = lowest validation loss, ties by
    candidate index (independent of completion order)."""
    if cfg.reweighter["kind"] != "grid":
        raise ConfigError("run_grid_search requires a grid reweighter")
    candidates = [check_simplex(c) for c in cfg.reweighter["candidates"]]
    run_dir = resolve_run_dir(cfg, out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    jobs = max(1, int(jobs))
    payloads = []
    for i, cand in enumerate(candidates):
        child = _candidate_config(cfg, cand)
        payloads.append((child.raw(), str(cfg.base_dir),
                         str(run_dir / f"candidate_{i}")))
    if jobs == 1:
        scores = [_run_candidate(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_run_candidate, payloads))
    picked = grid_search(candidates, lambda c: scores[_index_of(candidates, c)])
    selection = {
        "winner_index": picked.index,
        "winner_alpha": [float(a) for a in picked.alpha],
        "scores": [float(s) for s in scores],
        "candidates": [[float(a) for a in c] for c in candidates],
    }
    _write_json(run_dir / "selection.json", selection)
    return selection


def _index_of(candidates, cand) -> int:
    for i, c in enumerate(candidates):
        if c is cand or np.array_equal(c, cand):
            return i
    raise ValueError("candidate not found")


def run_noise_diagnostic(cfg: ExperimentConfig, n_batches: int = 64,
                         eps: float | None = None):
    """NoiseReport for the configured experiment at the initial parameters."""
    built = build_experiment(cfg)
    alpha = np.ones(len(built.aux))
    theta = ParamVector.zeros(built.layout)
    rng = RngState(cfg.trainer.seed, STREAM_DATA + 7)
    if eps is None:
        eps = cfg.trainer.lr_at(1)
    return noise_diagnostic(built.main, built.aux, alpha, theta, eps,
                            n_batches, rng,
                            batch_size_main=cfg.trainer.batch_size_main,
                            batch_size_aux=cfg.trainer.batch_size_aux,
                            prior_weight=cfg.trainer.prior_weight)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
