"""Command line interface.

Subcommands: run, oracle, diagnose-noise, gen-data, grid-search.
Exit codes: 0 success, 1 usage/validation error, 2 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from arml.config import ConfigError, load_config
from arml.core import RngState
from arml.harness import (build_experiment, run_experiment, run_grid_search,
                          run_noise_diagnostic)
from arml.oracle import (brute_force_optimal_weights, gaussian_entropy,
                         kl_gaussian, surrogate_prior)
from arml.synth import STREAM_DATA, generate_synthetic
from arml.tasks import Dataset, write_dataset_csv
from arml.trainer import NumericError


class _UsageError(Exception):
    def __init__(self, parser, message):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage errors instead of exiting(2)."""

    def error(self, message):
        raise _UsageError(self, message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="arml", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="train one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--gnuplot", action="store_true",
                     help="also write a plotting script next to the CSV")

    oracle = sub.add_parser("oracle", help="brute-force optimal weights")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--grid-res", type=float, default=None)

    diag = sub.add_parser("diagnose-noise",
                          help="minibatch vs injected noise report")
    diag.add_argument("--config", required=True)
    diag.add_argument("--batches", type=int, default=64)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--out", required=True)

    grid = sub.add_parser("grid-search", help="one child run per candidate")
    grid.add_argument("--config", required=True)
    grid.add_argument("--out", default=None)
    grid.add_argument("--jobs", type=int, default=1)
    return parser


def _load(path, seed=None):
    cfg = load_config(path)
    if seed is not None:
        cfg.trainer.seed = seed
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args.config, args.seed)
    artifacts = run_experiment(cfg, out_dir=args.out, gnuplot=args.gnuplot)
    alpha = ", ".join(f"{a:.4f}" for a in artifacts.manifest["final_alpha"])
    print(f"run {cfg.name}: final weights [{alpha}]")
    print(f"validation loss {artifacts.manifest['validation_loss']:.6g}")
    print(f"artifacts in {artifacts.run_dir}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _load(args.config)
    built = build_experiment(cfg)
    if built.family is None:
        raise ConfigError("oracle requires a gaussian_family task setup")
    grid_res = args.grid_res if args.grid_res is not None else \
        cfg.oracle.get("grid_res", 0.05)
    family = built.family
    alpha, kl = brute_force_optimal_weights(family, grid_res)
    print(f"grid resolution {grid_res}")
    print("alpha* =", " ".join(f"{a:.4f}" for a in alpha))
    print(f"kl(p*, p_alpha*) = {kl:.6f} nats")
    print(f"entropy(p*) = {gaussian_entropy(family.p_star):.6f} nats")
    uniform = [1.0] * family.num_tasks
    kl_uniform = kl_gaussian(family.p_star, surrogate_prior(family, uniform))
    print(f"kl(p*, p_uniform) = {kl_uniform:.6f} nats")
    return 0


def _cmd_diagnose_noise(args) -> int:
    cfg = _load(args.config)
    report = run_noise_diagnostic(cfg, n_batches=args.batches)
    print(f"gradient noise std {report.grad_noise_std:.6g}")
    print(f"injected noise std {report.injected_noise_std:.6g}")
    print(f"ratio {report.ratio:.6g}")
    return 0


def _cmd_gen_data(args) -> int:
    spec_path = Path(args.spec)
    try:
        spec = json.loads(spec_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read spec {spec_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{spec_path}: parse error at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    seed = int(spec.pop("seed", 0))
    data = generate_synthetic(spec, RngState(seed, STREAM_DATA))
    if not isinstance(data, Dataset):
        raise ConfigError("gen-data spec must describe a dataset generator")
    write_dataset_csv(data, args.out)
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def _cmd_grid_search(args) -> int:
    cfg = _load(args.config)
    selection = run_grid_search(cfg, out_dir=args.out, jobs=args.jobs)
    print(f"winner: candidate {selection['winner_index']} "
          f"alpha {selection['winner_alpha']}")
    print(f"scores: {selection['scores']}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "oracle": _cmd_oracle,
    "diagnose-noise": _cmd_diagnose_noise,
    "gen-data": _cmd_gen_data,
    "grid-search": _cmd_grid_search,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
