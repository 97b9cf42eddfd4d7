"""Command-line entry point: run, sweep, print-defaults.

Configuration comes from an optional "key = value" file plus repeatable
--set overrides. Exit code is 0 on success and 2 on configuration or I/O
errors. The UNIK_LOG environment variable (debug/info/warning) controls
log verbosity; it is the only environment input.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError
from .experiments import ExperimentConfig, parse_config_text, run_experiment, run_sweep

log = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("UNIK_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig()
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        config = parse_config_text(text, base=config, source=args.config)
    overrides = "\n".join(args.set or [])
    config = parse_config_text(overrides, base=config, source="--set")
    return config


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad {flag} list {text!r}") from exc
    if not values:
        raise ConfigError(f"{flag} list is empty")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unik", description="Grid active-search simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("--config", help="key = value config file")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    run_p.add_argument("--out", help="output stem (default: the config's output key)")

    sweep_p = sub.add_parser("sweep", help="cross-product over team sizes and target counts")
    sweep_p.add_argument("--config", help="key = value config file")
    sweep_p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    sweep_p.add_argument("--agents", required=True, help="comma list of team sizes, e.g. 1,2,4")
    sweep_p.add_argument("--targets", required=True, help="comma list of target counts, e.g. 1,5")
    sweep_p.add_argument("--out", required=True, help="output directory")

    sub.add_parser("print-defaults", help="print the default config")
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "print-defaults":
            sys.stdout.write(ExperimentConfig().as_text())
            return 0
        config = _load_config(args)
        if args.command == "run":
            stem = args.out if args.out is not None else config.output
            curve, records = run_experiment(config, stem=stem)
            recovered = sum(1 for r in records if r >= 0)
            print(f"{recovered}/{len(records)} trials recovered; final rate {curve.rates[-1]:.3f}; wrote {stem}_*.csv")
        else:
            results = run_sweep(
                config,
                _parse_int_list(args.agents, "--agents"),
                _parse_int_list(args.targets, "--targets"),
                args.out,
            )
            for (j, k), (curve, records) in sorted(results.items()):
                recovered = sum(1 for r in records if r >= 0)
                print(f"J={j} k={k}: {recovered}/{len(records)} recovered; final rate {curve.rates[-1]:.3f}")
        return 0
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
