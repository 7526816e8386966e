"""Command-line entry point: ``test``, ``power``, ``type1`` and ``oracle-check``."""

from __future__ import annotations

import argparse
import sys

from .harness import config as cfgmod
from .harness.config import ConfigError, Experiment
from .harness.experiments import (
    effective_parameters,
    emit_results,
    format_results,
    oracle_check,
    run_experiment,
    run_file_test,
)

EXIT_ERROR = 2


def _add_config_flags(p: argparse.ArgumentParser, experiment_choice: bool = True) -> None:
    p.add_argument("--config", help="key=value configuration file; flags override it")
    if experiment_choice:
        p.add_argument("--experiment", choices=[e.value for e in Experiment if e is not Experiment.TYPE1])
    p.add_argument("--N", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--s", type=int, help="held-out samples per side (default (N+M)/20)")
    p.add_argument("--d", type=int)
    p.add_argument("--sweep", help="comma-separated sweep values")
    p.add_argument("--reps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--w", type=float)
    p.add_argument("--w-tilde", dest="w_tilde", type=float)
    p.add_argument("--B", type=int, help="number of permutations")
    p.add_argument("--lambda-L", dest="lambda_L", type=float)
    p.add_argument("--lambda-U", dest="lambda_U", type=float)
    p.add_argument("--w-L", dest="w_L", type=float)
    p.add_argument("--w-U", dest="w_U", type=float)
    p.add_argument("--kernel", choices=["gaussian", "laplacian"])
    p.add_argument("--regularizer", choices=["tikhonov", "showalter", "cutoff"])
    p.add_argument("--method", choices=["spectral", "mmd_permutation", "mmd_chebyshev"])
    p.add_argument("--seed", dest="master_seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--header", dest="has_header", action="store_const", const="true",
                   help="CSV inputs have a header line")
    p.add_argument("--mnist-images", dest="mnist_images")
    p.add_argument("--mnist-labels", dest="mnist_labels")
    p.add_argument("--x-path", dest="x_path")
    p.add_argument("--y-path", dest="y_path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-mmd",
        description="Spectral-regularized kernel two-sample tests and power studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test two CSV samples (exit 1 on rejection)")
    p.add_argument("x_csv")
    p.add_argument("y_csv")
    _add_config_flags(p, experiment_choice=False)

    for name, helptext in (("power", "power curve over a sweep"),
                           ("type1", "rejection rate under the null, sweeping B")):
        p = sub.add_parser(name, help=helptext)
        _add_config_flags(p, experiment_choice=(name == "power"))
        p.add_argument("--out", help="results CSV (a .plot.csv companion is written next to it)")
        p.add_argument("--timing", action="store_const", const="true",
                       help="fill the seconds column (output is then not reproducible byte-for-byte)")

    p = sub.add_parser("oracle-check", help="compare fast statistics with brute-force oracles")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _config_from_args(args, **forced) -> cfgmod.ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(cfgmod.read_config_file(args.config))
    names = {f for f in cfgmod._FIELDS}
    for key, val in vars(args).items():
        if key in names and val is not None:
            values[key] = val
    values.update(forced)
    return cfgmod.from_mapping(values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "oracle-check":
            report = oracle_check(args.instances, args.seed)
            return 0 if report["passed"] else 1
        if args.command == "test":
            cfg = _config_from_args(args)
            _, code = run_file_test(args.x_csv, args.y_csv, cfg)
            return code
        forced = {"experiment": "type1"} if args.command == "type1" else {}
        cfg = _config_from_args(args, **forced).validate()
        results = run_experiment(cfg)
        params = effective_parameters(cfg)
        if args.out:
            companion = emit_results(results, args.out, params)
            print(f"wrote {args.out} and {companion}", file=sys.stderr)
        else:
            sys.stdout.write(format_results(results, params))
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
