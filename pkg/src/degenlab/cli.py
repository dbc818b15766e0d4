"""Command line entry point.

Usage::

    degenlab run <config.toml> [--out DIR] [--seed N] [--quiet]
    degenlab suite <name> [--out DIR] [--seed N] [--quiet]

Exit status is 0 when every assertion passes, 1 when any assertion fails
or a step errors, and 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .runner import SUITES, run_scenario, run_suite

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=None,
                        help="output directory (reports, CSV files, manifest)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    p = argparse.ArgumentParser(prog="degenlab",
                                description="Degenerate elliptic numerical laboratory.")
    p.add_argument("--version", action="version", version=f"degenlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run one scenario file")
    r.add_argument("config", type=Path)
    s = sub.add_parser("suite", parents=[common], help="run a bundled suite")
    s.add_argument("name", help="one of: " + ", ".join(SUITES))
    return p


def _logger(quiet):
    if quiet:
        return None

    def log(scenario, step):
        print(f"{scenario:<18} {step.name:<15} {step.status.upper():<5} {step.seconds:7.2f}s")
        for a in step.assertions:
            if not a.passed:
                print(f"    FAIL {a.name}: value={a.value!r} bound={a.bound!r}")
        if step.error:
            print(f"    ERROR {step.error}")
    return log


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse: usage errors exit 2, --help/--version 0
        return int(exc.code or 0)
    log = _logger(args.quiet)
    try:
        if args.command == "run":
            manifests = [run_scenario(args.config, args.out, args.seed, log)]
        else:
            if args.name not in SUITES:
                print(f"degenlab: unknown suite {args.name!r}; expected one of "
                      + ", ".join(SUITES), file=sys.stderr)
                return EXIT_USAGE
            out = args.out if args.out is not None else Path("degenlab-out")
            manifests = run_suite(args.name, out, args.seed, log)
    except ConfigError as exc:
        print(f"degenlab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ok = all(m.passed for m in manifests)
    if not args.quiet:
        print()
        for m in manifests:
            status = "PASS" if m.passed else f"FAIL ({m.failed_step})"
            print(f"{m.scenario:<24} {status:<24} hash={m.config_hash[:12]}")
    return EXIT_PASS if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
