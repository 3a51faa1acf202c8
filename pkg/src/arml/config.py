"""Experiment configuration: strict JSON with unknown keys rejected.

The loaded structure is echoed verbatim into every run manifest, so a run
can be reproduced from its manifest alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from arml.trainer import TrainerConfig

REWEIGHTER_KINDS = ("arml", "uniform", "adaloss", "gradnorm", "cosine",
                    "ol_aux", "grid", "fixed")
TASK_KINDS = ("gaussian_family", "datasets", "relevance_benchmark")
MODEL_KINDS = ("linear_regression", "logistic_regression", "mlp")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class ExperimentConfig:
    name: str
    trainer: TrainerConfig
    reweighter: dict
    tasks: dict
    oracle: dict = field(default_factory=dict)
    output_dir: str | None = None
    base_dir: Path = field(default_factory=Path)

    def raw(self) -> dict:
        """JSON-serializable echo of this configuration."""
        trainer = {
            "mode": self.trainer.mode,
            "iterations": self.trainer.iterations,
            "lr_schedule": [list(pair) for pair in self.trainer.lr_schedule],
            "weight_lr": self.trainer.weight_lr,
            "batch_size_main": self.trainer.batch_size_main,
            "batch_size_aux": self.trainer.batch_size_aux,
            "langevin": self.trainer.langevin,
            "convergence_tol": self.trainer.convergence_tol,
            "convergence_window": self.trainer.convergence_window,
            "max_stage1_iters": self.trainer.max_stage1_iters,
            "seed": self.trainer.seed,
            "prior_weight": self.trainer.prior_weight,
            "init_std": self.trainer.init_std,
        }
        out = {
            "name": self.name,
            "trainer": trainer,
            "reweighter": self.reweighter,
            "tasks": self.tasks,
        }
        if self.oracle:
            out["oracle"] = self.oracle
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out


class _Section:
    """Dict wrapper that tracks consumed keys and names fields in errors."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object")
        self.data = data
        self.path = path
        self.seen: set[str] = set()

    def take(self, key, kind=None, default=None, required=False):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"missing required field {self.path}.{key}")
            return default
        value = self.data[key]
        if kind is not None and not isinstance(value, kind):
            names = kind if isinstance(kind, tuple) else (kind,)
            wanted = "/".join(t.__name__ for t in names)
            raise ConfigError(
                f"{self.path}.{key}: expected {wanted}, got {type(value).__name__}")
        return value

    def section(self, key, required=False, default=None) -> "_Section | None":
        raw = self.take(key, dict, required=required, default=default)
        if raw is None:
            return None
        return _Section(raw, f"{self.path}.{key}")

    def finish(self):
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise ConfigError(f"unknown key {self.path}.{unknown[0]}"
                              + (f" (and {len(unknown) - 1} more)"
                                 if len(unknown) > 1 else ""))


_NUM = (int, float)


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return config_from_dict(data, base_dir=path.parent)


def config_from_dict(data: dict, base_dir=Path(".")) -> ExperimentConfig:
    root = _Section(data, "config")
    name = root.take("name", str, required=True)
    output_dir = root.take("output_dir", str)
    trainer = _parse_trainer(root.section("trainer", required=True))
    reweighter = _parse_reweighter(root.section("reweighter"))
    tasks = _parse_tasks(root.section("tasks", required=True), Path(base_dir))
    oracle = _parse_oracle(root.section("oracle"))
    root.finish()
    return ExperimentConfig(name=name, trainer=trainer, reweighter=reweighter,
                            tasks=tasks, oracle=oracle, output_dir=output_dir,
                            base_dir=Path(base_dir))


def _parse_trainer(sec: _Section) -> TrainerConfig:
    iterations = sec.take("iterations", int, required=True)
    schedule = sec.take("lr_schedule", list, default=[[0, 1e-3]])
    for entry in schedule:
        if (not isinstance(entry, list) or len(entry) != 2
                or not isinstance(entry[0], int)
                or not isinstance(entry[1], _NUM)):
            raise ConfigError(
                f"{sec.path}.lr_schedule entries must be [start_iter, lr] pairs")
    kwargs = dict(
        iterations=iterations,
        mode=sec.take("mode", str, default="alg1"),
        lr_schedule=tuple((int(s), float(e)) for s, e in schedule),
        weight_lr=float(sec.take("weight_lr", _NUM, default=0.005)),
        batch_size_main=sec.take("batch_size_main", int, default=0),
        batch_size_aux=sec.take("batch_size_aux", int, default=0),
        langevin=sec.take("langevin", bool, default=True),
        convergence_tol=float(sec.take("convergence_tol", _NUM, default=1e-3)),
        convergence_window=sec.take("convergence_window", int, default=100),
        max_stage1_iters=sec.take("max_stage1_iters", int),
        seed=sec.take("seed", int, default=0),
        prior_weight=float(sec.take("prior_weight", _NUM, default=0.0)),
        init_std=float(sec.take("init_std", _NUM, default=0.0)),
    )
    sec.finish()
    try:
        return TrainerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{sec.path}: {exc}") from exc


def _parse_reweighter(sec: _Section | None) -> dict:
    if sec is None:
        return {"kind": "arml", "snapshot_ema": 0.0}
    kind = sec.take("kind", str, required=True)
    if kind not in REWEIGHTER_KINDS:
        raise ConfigError(f"{sec.path}.kind: unknown reweighter {kind!r}")
    out = {"kind": kind}
    if kind == "arml":
        out["snapshot_ema"] = float(sec.take("snapshot_ema", _NUM, default=0.0))
        if not 0.0 <= out["snapshot_ema"] < 1.0:
            raise ConfigError(f"{sec.path}.snapshot_ema must be in [0, 1)")
    if kind == "gradnorm":
        out["gamma"] = float(sec.take("gamma", _NUM, default=1.0))
    if kind == "grid":
        candidates = sec.take("candidates", list, required=True)
        if not candidates:
            raise ConfigError(f"{sec.path}.candidates must be non-empty")
        out["candidates"] = [[float(v) for v in cand] for cand in candidates]
    if kind == "fixed":
        out["alpha"] = [float(v) for v in sec.take("alpha", list, required=True)]
    sec.finish()
    return out


def _parse_data_source(sec: _Section | None, base_dir: Path, what: str):
    """A dataset source: {"csv": path} or {"generator": {...}}."""
    if sec is None:
        raise ConfigError(f"missing data source for {what}")
    csv_path = sec.take("csv", str)
    generator = sec.take("generator", dict)
    sec.finish()
    if (csv_path is None) == (generator is None):
        raise ConfigError(f"{sec.path}: exactly one of csv/generator required")
    if csv_path is not None:
        resolved = (base_dir / csv_path).resolve()
        if not resolved.exists():
            raise ConfigError(f"{sec.path}.csv: file not found: {resolved}")
        return {"csv": str(resolved)}
    return {"generator": generator}


def _parse_model_spec(sec: _Section, base_dir: Path, needs_data=True) -> dict:
    model = sec.take("model", str, required=True)
    if model not in MODEL_KINDS:
        raise ConfigError(f"{sec.path}.model: unknown model {model!r}")
    out = {"model": model}
    if model in ("linear_regression", "mlp"):
        out["noise_std"] = float(sec.take("noise_std", _NUM, default=1.0))
        if out["noise_std"] <= 0:
            raise ConfigError(f"{sec.path}.noise_std must be positive")
    if model == "mlp":
        hidden = sec.take("hidden", list, required=True)
        out["hidden"] = [int(h) for h in hidden]
    if needs_data:
        out["data"] = _parse_data_source(sec.section("data", required=True),
                                         base_dir, sec.path)
    sec.finish()
    return out


def _parse_tasks(sec: _Section, base_dir: Path) -> dict:
    kind = sec.take("kind", str, required=True)
    if kind not in TASK_KINDS:
        raise ConfigError(f"{sec.path}.kind: unknown task setup {kind!r}")
    out = {"kind": kind}
    if kind == "gaussian_family":
        out["aux_centers"] = sec.take("aux_centers", list, required=True)
        out["covariance"] = sec.take("covariance", (int, float, list), required=True)
        out["p_star_mean"] = sec.take("p_star_mean", list, required=True)
        out["p_star_covariance"] = sec.take("p_star_covariance",
                                            (int, float, list, str),
                                            default="matched")
        main = sec.section("main")
        if main is not None:
            spec = {"model": main.take("model", str, required=True)}
            if spec["model"] != "linear_regression":
                raise ConfigError(f"{main.path}.model: only linear_regression "
                                  "mains are supported in gaussian_family runs")
            spec["n"] = main.take("n", int, required=True)
            spec["noise_std"] = float(main.take("noise_std", _NUM, default=0.5))
            weights = main.take("weights", (str, list), default="p_star_mean")
            if isinstance(weights, str) and weights != "p_star_mean":
                raise ConfigError(f"{main.path}.weights: expected a vector or "
                                  "'p_star_mean'")
            spec["weights"] = weights
            main.finish()
            out["main"] = spec
    elif kind == "datasets":
        out["main"] = _parse_model_spec(sec.section("main", required=True), base_dir)
        aux_raw = sec.take("aux", list, required=True)
        if not aux_raw:
            raise ConfigError(f"{sec.path}.aux must be non-empty")
        out["aux"] = [
            _parse_model_spec(_Section(a, f"{sec.path}.aux[{i}]"), base_dir)
            for i, a in enumerate(aux_raw)]
        val = sec.section("validation")
        if val is not None:
            out["validation"] = _parse_data_source(val, base_dir,
                                                   f"{sec.path}.validation")
    else:  # relevance_benchmark
        out["num_features"] = sec.take("num_features", int, required=True)
        out["main_n"] = sec.take("main_n", int, required=True)
        out["val_n"] = sec.take("val_n", int, default=256)
        out["noise_std"] = float(sec.take("noise_std", _NUM, default=0.5))
        aux = sec.take("aux", list, required=True)
        parsed = []
        for i, entry in enumerate(aux):
            asec = _Section(entry, f"{sec.path}.aux[{i}]")
            parsed.append({"n": asec.take("n", int, required=True),
                           "relevance": float(asec.take("relevance", _NUM,
                                                        required=True))})
            asec.finish()
        out["aux"] = parsed
    sec.finish()
    return out


def _parse_oracle(sec: _Section | None) -> dict:
    if sec is None:
        return {}
    out = {"grid_res": float(sec.take("grid_res", _NUM, default=0.05))}
    if not 0 < out["grid_res"] <= 1:
        raise ConfigError(f"{sec.path}.grid_res must lie in (0, 1]")
    sec.finish()
    return out
