"""Command line: ``cscklab <command> --config FILE``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 ``solve --require-certified`` without a certificate.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .curves import GridError
from .experiments import COMMANDS, CertificationError, run_experiment
from .fibre import ConvergenceError, GeometryInputError
from .kahler import PositivityError
from .ladder import LadderError
from .linear import SolverError
from .report import ReportError, emit_report

NUMERICAL = (SolverError, ConvergenceError, LadderError, PositivityError, GeometryInputError,
             NotImplementedError, FloatingPointError, ZeroDivisionError)


def build_parser():
    p = argparse.ArgumentParser(prog="cscklab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True)
        c.add_argument("--out", help="output directory (default: [output] dir)")
        c.add_argument("--order", type=int, help="override [ladder] order")
        if name == "solve":
            c.add_argument("--require-certified", action="store_true")
    r = sub.add_parser("report")
    r.add_argument("dirs", nargs="+")
    r.add_argument("--output", "-o")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            text = emit_report(args.dirs, args.output)
            if args.output is None:
                sys.stdout.write(text)
            return 0
        cfg = load_config(args.config)
        overrides = {}
        if args.order is not None:
            if not 0 <= args.order <= 6:
                raise ConfigError(f"--order must be between 0 and 6, got {args.order}")
            overrides["order"] = args.order
            cfg = cfg.with_overrides(order=args.order)
        code, msg, out = run_experiment(cfg, args.command, args.out, overrides,
                                        getattr(args, "require_certified", False))
        print(msg)
        print(f"outputs in {out}")
        return code
    except (ConfigError, GridError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CertificationError as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return 4
    except NUMERICAL as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
