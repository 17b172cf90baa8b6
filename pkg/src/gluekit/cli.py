"""Command-line entry point.

One subcommand per experiment kind plus `list-presets`.  A run takes either
--config FILE or --preset NAME, with --set key=value overrides applied on
top; results land in the config's output_dir unless --output says otherwise.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import (
    KINDS,
    ConfigError,
    apply_overrides,
    config_from_dict,
    list_presets,
    load_config,
    load_preset,
)
from .coneqp import NumericalError
from .experiments import emit_reports, run_experiment
from .glue import DegenerateDrawsError
from .model import DataError
from .npyio import FormatError
from .simcap import UnseparableError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gluekit",
        description="Manifold capacity and representation-geometry experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind, help=f"run a {kind} experiment")
        sp.add_argument("--config", help="path to a JSON experiment config")
        sp.add_argument("--preset", help="name of a shipped preset config")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config field (dotted path, JSON value)")
        sp.add_argument("--output", help="output directory (overrides config output_dir)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--parallelism", type=int, help="cap worker processes")
    lp = sub.add_parser("list-presets", help="list shipped preset configs")
    del lp
    return parser


def _resolve_config(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = load_preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    if cfg.kind != args.command:
        raise ConfigError(f"config kind {cfg.kind!r} does not match subcommand {args.command!r}")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.parallelism is not None:
        overrides.append(f"parallelism={args.parallelism}")
    if args.output is not None:
        doc = cfg.to_dict()
        doc["output_dir"] = args.output
        cfg = config_from_dict(doc)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-presets":
        for name in list_presets():
            print(name)
        return EXIT_OK
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        bundle = run_experiment(cfg)
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, UnseparableError, DegenerateDrawsError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    try:
        paths = emit_reports(bundle, cfg.output_dir)
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
