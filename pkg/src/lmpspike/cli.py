"""Batch command-line front end.

Subcommands: regions (decomposition export + summary), rank (decay-rate
table), mc (Monte Carlo validation), ptdf (matrix dump).  All take a JSON
config; a handful of flags override config keys.  Exit codes: 0 success,
2 config or parse error, 3 infeasible model, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import (CaseError, ConfigError, InfeasibleError, LmpSpikeError,
                     NumericalError)
from .pipeline import (AnalysisConfig, build_study, cmd_mc, cmd_ptdf,
                       cmd_rank, cmd_regions)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmpspike",
        description="Price-spike likelihood analysis for DC power grids")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in (("regions", "enumerate critical regions"),
                        ("rank", "rank nodes by spike decay rate"),
                        ("mc", "Monte Carlo validation of the ranking"),
                        ("ptdf", "dump the PTDF matrix")):
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override mc_seed")
        p.add_argument("--out", default=None, help="override output_dir")
        p.add_argument("--err-rel", default=None,
                       help="override err_rel (comma-separated list)")
        p.add_argument("--n-samples", type=int, default=None,
                       help="override mc_n_samples")
    return parser


def _apply_overrides(config: AnalysisConfig, args) -> AnalysisConfig:
    if args.seed is not None:
        config.mc_seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if args.n_samples is not None:
        if args.n_samples < 1:
            raise ConfigError("--n-samples must be >= 1")
        config.mc_n_samples = args.n_samples
    if args.err_rel is not None:
        try:
            values = [float(v) for v in args.err_rel.split(",") if v]
        except ValueError:
            raise ConfigError(f"bad --err-rel value: {args.err_rel}") from None
        if not values or any(v <= 0 for v in values):
            raise ConfigError("--err-rel values must be positive")
        config.err_rel = values
        config.alpha_minus = None
        config.alpha_plus = None
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = AnalysisConfig.from_json(args.config)
        config = _apply_overrides(config, args)
        study = build_study(config)
        if args.command == "regions":
            cmd_regions(study)
        elif args.command == "rank":
            cmd_rank(study)
        elif args.command == "mc":
            cmd_mc(study)
        elif args.command == "ptdf":
            cmd_ptdf(study)
    except (ConfigError, CaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalError, LmpSpikeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
