"""Command line entry point.

    roughflow <kind> [--config PATH] [--seed N] [--workers K] [--out DIR]

Without --config the built-in desk-scale defaults run; ROUGHFLOW_SEED is the
fallback seed if neither flag nor config provides one.
"""
from __future__ import annotations

import argparse
import os
import sys

from .experiments import KINDS, default_config, parse_config, run


def build_parser():
    ap = argparse.ArgumentParser(
        prog="roughflow",
        description="desk-scale rough-flow and turbulence homogenization experiments")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", help="INI config file (defaults used if omitted)")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.config:
        cfg = parse_config(args.config)
        if cfg.kind != args.kind:
            print(f"config kind '{cfg.kind}' does not match '{args.kind}'",
                  file=sys.stderr)
            return 2
    else:
        cfg = default_config(args.kind)
        cfg.seed = None
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.seed is None and os.environ.get("ROUGHFLOW_SEED"):
        cfg.seed = int(os.environ["ROUGHFLOW_SEED"])
    if cfg.seed is None and not args.config:
        cfg.seed = 1
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out_dir = args.out
    code, report = run(cfg)
    verdicts = report.get("verdicts", {})
    for name, verdict in verdicts.items():
        state = "PASS" if verdict else ("SKIP" if verdict is None else "FAIL")
        print(f"{report['kind']}: {name}: {state}")
    if "violations" in report:
        for v in report["violations"]:
            print(f"invalid config: {v}", file=sys.stderr)
    if "error" in report:
        print(f"runtime failure: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
