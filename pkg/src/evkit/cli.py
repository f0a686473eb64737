"""``evkit`` command line: split, stme and selftest subcommands.

Exit status is 0 on success, 1 when a selftest check fails and 2 on any
configuration, parse or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import selftest
from .errors import ConfigError, EvkitError
from .esa import SparsityConfig
from .events import DEFAULT_GEOMETRY, SensorGeometry
from .pipeline import PipelineConfig, run_split, run_stme

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _number_list(text: str) -> tuple[float, ...]:
    """Comma-separated decimals or ratios, e.g. ``0.5,2/3,0.75``."""
    try:
        return tuple(float(Fraction(tok.strip())) for tok in text.split(",") if tok.strip())
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _sparsity_args(p):
    p.add_argument("--esa-fractions", type=_number_list, default=None,
                   help="top-K fractions, default 1/2,2/3,3/4,4/5")
    p.add_argument("--esa-lambdas", type=_number_list, default=None,
                   help="per-level weights, default uniform 1/n")


def _pipeline_args(p):
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "bin"), default=None,
                   help="event file format (default: from the file suffix)")
    p.add_argument("--width", type=int, default=DEFAULT_GEOMETRY.width)
    p.add_argument("--height", type=int, default=DEFAULT_GEOMETRY.height)
    p.add_argument("--start-us", type=int, default=None)
    p.add_argument("--end-us", type=int, default=None)
    p.add_argument("--n", type=int, default=3, help="number of subframes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    _sparsity_args(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split events into subframes and write PPMs + stats.json")
    _pipeline_args(p)
    p.add_argument("--write-counts", action="store_true",
                   help="also write counts.json with every integer count grid")

    p = sub.add_parser("stme", help="pool + STME features over consecutive subframes")
    _pipeline_args(p)
    p.add_argument("--cell", type=int, default=16, help="featurizer block size in pixels")
    p.add_argument("--channels", type=int, default=8, help="feature channels (multiple of 4)")
    p.add_argument("--tie-projections", action="store_true",
                   help="reuse the previous-subframe K/V projections for the current one")
    p.add_argument("--pool-chained", action="store_true",
                   help="feed group 3's cascaded output into group 4 when pooling")
    p.add_argument("--params", type=Path, default=None, help="parameter JSON document")

    p = sub.add_parser("selftest", help="run acceptance checks AC1..AC10")
    p.add_argument("--quick", action="store_true", help="run a tenth of the workload")
    p.add_argument("--only", nargs="+", metavar="ID", choices=list(selftest.CHECKS))
    _sparsity_args(p)
    return parser


def _sparsity(args) -> SparsityConfig:
    fractions = args.esa_fractions
    if fractions is None:
        return SparsityConfig(lambdas=args.esa_lambdas)
    return SparsityConfig(fractions, args.esa_lambdas)


def _config(args) -> PipelineConfig:
    try:
        geom = SensorGeometry(args.width, args.height)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return PipelineConfig(
        input=args.input, out=args.out, format=args.format, geometry=geom,
        start_us=args.start_us, end_us=args.end_us, n=args.n, sparsity=_sparsity(args),
        seed=args.seed,
        cell=getattr(args, "cell", 16), channels=getattr(args, "channels", 8),
        tie_projections=getattr(args, "tie_projections", False),
        pool_chained=getattr(args, "pool_chained", False),
        params_path=getattr(args, "params", None),
        write_counts=getattr(args, "write_counts", False),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "split":
            stats = run_split(_config(args))
            print(f"wrote {stats['n']} subframes to {args.out}")
            return EXIT_OK
        if args.command == "stme":
            result = run_stme(_config(args))
            print(f"wrote {len(result['features']['pairs'])} STME pair features to {args.out}")
            return EXIT_OK
        sparsity = _sparsity(args)
        results = selftest.run_all(0.1 if args.quick else 1.0, sparsity, args.only)
        print(selftest.format_report(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED
    except EvkitError as exc:
        print(f"evkit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"evkit: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
