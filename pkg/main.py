"""
Transport layer - command-line entry points only.
Parses arguments, delegates to services, maps failures to exit codes.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

import storage
from models import ConfigError
from profile_kernels import build_kernel_table
from services import (
    EXIT_OK,
    EXIT_VALIDATION,
    PRESETS,
    __version__,
    exit_code_for,
    fit_series_file,
    get_preset,
    run_experiment,
    run_many,
)

logger = logging.getLogger("fracflow")


def cmd_run(args: argparse.Namespace) -> int:
    """Run one or more config files; the worst exit code wins."""
    results = run_many(args.configs, jobs=args.jobs, output_root=args.output_root)
    code = EXIT_OK
    for path, status, message in results:
        if status == EXIT_OK:
            print(f"{path}: ok -> {message}")
        else:
            print(f"{path}: failed ({status}) {message}", file=sys.stderr)
        code = max(code, status)
    return code


def cmd_preset(args: argparse.Namespace) -> int:
    if args.list:
        for name in sorted(PRESETS):
            print(name)
        return EXIT_OK
    if not args.name:
        print("preset name required (see --list)", file=sys.stderr)
        return EXIT_VALIDATION
    cfg = get_preset(args.name)
    result = run_experiment(cfg, Path(args.output_root) if args.output_root else None)
    print(f"{args.name}: ok -> {result.output_dir}")
    return EXIT_OK


def cmd_snapshot_info(args: argparse.Namespace) -> int:
    header = storage.read_snapshot_header(args.path)
    print(f"version     {header.version}")
    print(f"variant     {header.variant}")
    print(f"grid        n={header.n} L={header.box_length!r}")
    print(f"alpha, beta {header.alpha!r}, {header.beta!r}")
    print(f"time        {header.time!r}")
    print(f"fields      {', '.join(header.field_names)}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    rows = fit_series_file(Path(args.series), mode=args.mode)
    print(f"{'column':<16}{'exponent':>14}{'expected':>14}{'r^2':>10}  status")
    for row in rows:
        exponent = row.get("exponent", float("nan"))
        r2 = row.get("r_squared", float("nan"))
        print(f"{row['column']:<16}{exponent:>14.6g}{row['expected']:>14.6g}{r2:>10.4f}  {row['status']}")
    return EXIT_OK


def cmd_kernel_table(args: argparse.Namespace) -> int:
    table = build_kernel_table(args.alpha, args.r_max, args.points)
    table.dump(args.path)
    print(f"alpha={args.alpha}: {len(table.radii)} radii up to {table.r_max:g} -> {args.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fracflow",
        description="Pseudo-spectral SQG / Boussinesq runs with fractional dissipation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run config files")
    p.add_argument("configs", nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="configs run in parallel")
    p.add_argument("--output-root", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a built-in experiment")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--output-root", default=None)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("snapshot-info", help="print a snapshot header")
    p.add_argument("path")
    p.set_defaults(func=cmd_snapshot_info)

    p = sub.add_parser("fit", help="re-fit decay exponents of a series CSV")
    p.add_argument("series")
    p.add_argument("--mode", choices=["log1p_t", "tau"], default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("kernel-table", help="tabulate G and G' for one alpha")
    p.add_argument("alpha", type=float)
    p.add_argument("path")
    p.add_argument("--r-max", type=float, default=100.0)
    p.add_argument("--points", type=int, default=400)
    p.set_defaults(func=cmd_kernel_table)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        code = exit_code_for(e)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
