"""Command-line front end.

Verbs: solve, decay, holder, flatness, verify.  Every verb takes
--config <path>, --out <dir>, --seed <u64>, --threads <n>.  Exit status:
0 success, 2 config validation error, 3 solver failure, 4 verification
failure.
"""

from __future__ import annotations

import argparse
import sys

from . import experiments
from .config import ConfigError, ExperimentConfig
from .discretize import AssemblyError
from .geometry import DomainError
from .solve import SolverError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_VERIFY = 4


def _add_common(sub):
    sub.add_argument("--config", required=False, help="experiment config (JSON)")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    sub.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polyflat",
        description="High-order elliptic Dirichlet laboratory on rough domains")
    subs = parser.add_subparsers(dest="verb", required=True)
    for verb, helptext in (
        ("solve", "assemble and solve, write the solution raster"),
        ("decay", "local energy decay exponents at sampled centers"),
        ("holder", "Hölder exponent / oscillation seminorm estimation"),
        ("flatness", "boundary flatness scan"),
        ("verify", "identity and inequality check table"),
    ):
        _add_common(subs.add_parser(verb, help=helptext))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = None
    try:
        if args.config is not None:
            cfg = ExperimentConfig.load(args.config)
        elif args.verb != "verify":
            raise ConfigError("", f"verb {args.verb!r} requires --config")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.verb == "solve":
            path = experiments.run_solve(cfg, args.out, args.seed, args.threads)
            print(f"solution raster: {path}")
        elif args.verb == "decay":
            path = experiments.run_decay(cfg, args.out, args.seed, args.threads)
            print(f"decay report: {path}")
        elif args.verb == "holder":
            path = experiments.run_holder(cfg, args.out, args.seed, args.threads)
            print(f"holder report: {path}")
        elif args.verb == "flatness":
            path = experiments.run_flatness(cfg, args.out, args.seed, args.threads)
            print(f"flatness report: {path}")
        elif args.verb == "verify":
            path, ok = experiments.run_verify(cfg, args.out, args.seed, args.threads)
            table = path.read_text().rstrip("\n").split("\n")
            widths = [max(len(row.split(",")[i]) for row in table) for i in range(4)]
            for row in table:
                cells = row.split(",")
                print("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
            if not ok:
                return EXIT_VERIFY
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AssemblyError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
