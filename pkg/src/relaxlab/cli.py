"""Command line entry point.

Exit codes: 0 success, 2 config/schema problems, 3 solver failures,
4 diagnostics failures.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import (ConfigError, load_config, run, compare,
                          format_compare, emit_plot_data)
from .solver import SolverDivergedError, TubeEscapeError, ContinuationError
from .diagnostics import DiagnosticsError

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DIAGNOSTICS = 4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="relaxlab",
        description="Minimize relaxed manifold-valued energies along an eps "
                    "schedule and test the structural estimates on the results.")
    sub = p.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute a config and write artifacts")
    runp.add_argument("config", help="path to a JSON run config")
    runp.add_argument("--fast", action="store_true",
                      help="halve the grid divisions (CI preset)")
    runp.add_argument("--out", default=None,
                      help="artifact directory (default runs/<name>[_fast])")

    cmpp = sub.add_parser("compare", help="diff two run summaries")
    cmpp.add_argument("run_a")
    cmpp.add_argument("run_b")

    plotp = sub.add_parser("plot", help="emit .dat tables and SVG charts")
    plotp.add_argument("run_dir")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            rc = load_config(args.config)
            out_dir = args.out or f"runs/{rc.name}{'_fast' if args.fast else ''}"
            summary = run(rc, out_dir, fast=args.fast)
            for line in summary["acceptance"]:
                print(f"[{line['status']:4s}] {line['id']:2d} {line['name']}: "
                      f"{line['detail']}")
            print(f"artifacts in {out_dir}")
            return 0
        if args.command == "compare":
            result = compare(args.run_a, args.run_b)
            print(format_compare(result))
            return 0
        if args.command == "plot":
            written = emit_plot_data(args.run_dir)
            for path in written:
                print(path)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDivergedError, TubeEscapeError, ContinuationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except DiagnosticsError as exc:
        print(f"diagnostics error: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
