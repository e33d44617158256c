"""
apsde command line: one subcommand per experiment kind plus repro and schema.

    apsde <subcommand> --config PATH [--seed N] [--out DIR] [-v | -q]
    apsde repro [--seed N] [--out DIR] [--n-mc N]
    apsde schema
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from src.core.errors import ApsdeError
from src.ui.config import CONFIG_SCHEMA, DEFAULT_SEED, EXPERIMENTS, load_config
from src.ui.experiments import (
    EXIT_ERROR, OUT_ENV, REPRO_N_MC, default_out_dir, run_repro, run_experiment, write_result,
)
from src.utils.io import dumps_json

logger = logging.getLogger("apsde")


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="override the random seed")
    parser.add_argument("--out", type=Path, default=None,
                        help=f"output directory (default: config, then ${OUT_ENV}, then ./apsde_out)")
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    noise.add_argument("-q", "--quiet", action="store_true", help="warnings only")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="apsde",
        description="Almost periodicity checks for linear SDEs: kernels, scans, falsification, Monte Carlo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, required=True, help="JSON experiment config")
        _common(p)
    p = sub.add_parser("repro", help="run the full counterexample suite")
    p.add_argument("--n-mc", type=int, default=REPRO_N_MC, help="Monte Carlo paths per estimate")
    _common(p)
    sub.add_parser("schema", help="print the config schema")
    return parser


def _configure_logging(args):
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _out_dir(args, config=None):
    if args.out is not None:
        return args.out
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    return default_out_dir()


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    if args.command == "schema":
        sys.stdout.write(dumps_json(CONFIG_SCHEMA))
        return 0
    try:
        if args.command == "repro":
            seed = DEFAULT_SEED if args.seed is None else args.seed
            out_dir = _out_dir(args)
            report, code = run_repro(seed=seed, out_dir=out_dir, n_mc=args.n_mc)
            for name, ok in sorted(report["verdicts"].items()):
                print(f"{'ok  ' if ok else 'FAIL'} {name}")
            print(f"report: {out_dir / 'report.json'}")
            return code

        config = load_config(args.config, experiment=args.command)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        result = run_experiment(config)
        path = write_result(result, config, _out_dir(args, config))
        print(f"{result.experiment}: {result.verdict}")
        print(f"report: {path}")
        return result.exit_code
    except (ApsdeError, ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
