"""Command-line front end.

    erwre <subcommand> [--config FILE] [flags]

Values from ``--config`` (flat ``key=value`` lines) are read first and any
flag given on the command line overrides them.  Exit codes: 0 success,
1 usage error, 2 failed assertion (a coupling violation), 3 I/O error.
"""
from __future__ import annotations

import argparse
import sys

from .env_model import EnvironmentSpec, parse_config_text
from .harness import SUBCOMMANDS, ExperimentConfig, emit_report, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ASSERT = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="erwre", description=__doc__.split("\n\n")[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="key=value file; flags override its values")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--horizon", type=int, help="step cap (generations for bpre)")
    parser.add_argument("--kmax", type=int, help="largest k (hitprob) or n (rde)")
    parser.add_argument("--lambda", dest="lam",
                        help="cookie tail exponent; comma-separated grid for phase")
    parser.add_argument("--beta", help="cookie log-scale; comma-separated grid for phase")
    parser.add_argument("--p", type=float, help="fixed right-step probability")
    parser.add_argument("--mask", choices=("everywhere", "positive", "negative"))
    parser.add_argument("--out", help="output file (default: stdout)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--workers", type=int)
    parser.add_argument("--trials", type=int, help="Monte Carlo walks per hitprob case")
    parser.add_argument("--level", type=float, help="KS test level for rde")
    return parser


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def config_from_args(args) -> ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = parse_config_text(fh.read())
    flags = {"seed": args.seed, "replicas": args.replicas, "horizon": args.horizon,
             "kmax": args.kmax, "lambda": args.lam, "beta": args.beta, "mask": args.mask,
             "out": args.out, "format": args.format, "workers": args.workers,
             "trials": args.trials, "level": args.level}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.p is not None:
        values.update(p_law="fixed", p=args.p)

    lambdas = _floats(values["lambda"]) if "lambda" in values else ()
    betas = _floats(values["beta"]) if "beta" in values else ()
    if args.subcommand == "phase":
        values["cookie_law"] = "none"
    elif "cookie_law" not in values and (lambdas or betas):
        values["cookie_law"] = "example"
    env_values = dict(values)
    if env_values.get("cookie_law") == "example":
        if len(lambdas) != 1 or len(betas) != 1:
            raise ValueError("the example cookie law needs one --lambda and one --beta")
        env_values["lambda"], env_values["beta"] = lambdas[0], betas[0]
    env = EnvironmentSpec.from_mapping(env_values)

    def opt_int(key):
        return int(values[key]) if key in values else None

    return ExperimentConfig(
        subcommand=args.subcommand, env=env, seed=int(values.get("seed", 0)),
        replicas=opt_int("replicas"), horizon=opt_int("horizon"), k_max=opt_int("kmax"),
        lambdas=lambdas, betas=betas, out_format=values.get("format", "csv"),
        out_path=values.get("out"), workers=int(values.get("workers", 1)),
        trials=int(values.get("trials", 10**4)), level=float(values.get("level", 0.01)))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = config_from_args(args)
    except UsageError as exc:
        print(f"erwre: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError) as exc:
        print(f"erwre: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"erwre: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    report = run_experiment(config)
    try:
        emit_report(report, config.out_format, config.out_path)
    except OSError as exc:
        print(f"erwre: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    if report.violations:
        print(f"erwre: {report.violations} coupling violations", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
