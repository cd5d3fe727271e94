"""Command line entry point ``reihom``.

Verbs select stages (prerequisites are added automatically)::

    reihom validate --scenario s.ini      coefficient checks
    reihom cells    --scenario s.ini      cell problems and tensor
    reihom tensor   --scenario s.ini      same as cells
    reihom flow     --scenario s.ini      homogenized run
    reihom sweep    --scenario s.ini      corrector sweep
    reihom sigma    --scenario s.ini      two-scale diagnostics
    reihom all      --scenario s.ini      stages listed in the scenario

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant-suite failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4

VERBS = {
    "validate": ("validate",),
    "cells": ("cells", "tensor"),
    "tensor": ("cells", "tensor"),
    "flow": ("flow",),
    "sweep": ("sweep",),
    "sigma": ("sigma",),
    "all": None,
}

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reihom", description="Reiterated homogenization pipeline.")
    p.add_argument("verb", choices=tuple(VERBS))
    p.add_argument("--scenario", required=True, metavar="PATH", help="INI scenario file")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides [run] out)")
    p.add_argument("--stages", metavar="LIST", help="comma-separated stages (overrides the verb)")
    p.add_argument("--threads", type=int, metavar="N", help="BLAS/OpenMP thread count")
    p.add_argument("--force", action="store_true", help="ignore the cell cache")
    p.add_argument("--override-resolution", action="store_true",
                   help="run the sweep on grids that violate the resolution rule (unsafe)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("reihom: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        # only effective when the BLAS libraries have not been loaded yet
        for v in _THREAD_VARS:
            os.environ[v] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")

    from dataclasses import replace

    from .pipeline import run_pipeline, stage_closure
    from .scenario import ScenarioError, parse_scenario

    try:
        s = parse_scenario(args.scenario)
        if args.override_resolution:
            s = replace(s, override_resolution=True)
        if args.stages:
            stages = tuple(x.strip() for x in args.stages.split(",") if x.strip())
        else:
            stages = VERBS[args.verb] or s.stages
        stages = stage_closure(stages)
        s = replace(s, stages=stages).check()
    except (ScenarioError, ValueError) as exc:
        print(f"reihom: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    m = run_pipeline(s, out=args.out or s.out, stages=stages, force=args.force)
    for name, rec in m.stages.items():
        line = f"{name:9s} {rec.status:8s} {rec.seconds:8.2f}s"
        print(line + (f"  {rec.error}" if rec.error else ""))
    for name, ok in sorted(m.invariants.items()):
        print(f"invariant {name}: {'pass' if ok else 'FAIL'}")
    if m.failed_stages:
        return EXIT_NUMERIC
    if not m.invariants_ok:
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
