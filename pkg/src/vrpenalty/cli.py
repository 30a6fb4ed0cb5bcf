"""Command line: ``vrpenalty run <plan>``, ``vrpenalty verify``, ``vrpenalty report <dir>``.

Exit status is 0 on success, 1 on divergence or a failing check, 2 on
invalid input (malformed plan, unknown fault, unreadable directory).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import faults, harness, verify
from .errors import VRPenaltyError


def _formats(value):
    if value is None:
        return None
    return (value,)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    common.add_argument("--out", default=None, help=f"output directory (overrides ${harness.OUT_ENV})")
    common.add_argument("--format", choices=harness.FORMATS, default=None,
                        help="write only this report format (default: both)")
    parser = argparse.ArgumentParser(prog="vrpenalty", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[common], help="execute every cell of an experiment plan")
    p_run.add_argument("plan", help="plan file (INI)")
    p_ver = sub.add_parser("verify", parents=[common], help="run the property self-checks")
    p_ver.add_argument("--fault", choices=faults.FAULTS, default=None,
                       help=f"plant a fault (requires {faults.ENABLE_VAR}=1)")
    p_rep = sub.add_parser("report", parents=[common], help="fits, envelopes and plot CSV from a run directory")
    p_rep.add_argument("dir", help="output directory of a previous run (or its traces/ subdirectory)")
    return parser


def cmd_run(args) -> int:
    plan = harness.load_plan(args.plan)
    if args.jobs is not None and args.jobs < 1:
        raise harness.PlanError("--jobs must be a positive integer")
    out = harness.resolve_out(args.out, plan)
    agg = harness.execute_plan(plan, out, jobs=args.jobs, formats=_formats(args.format))
    print(harness.format_slopes_table(agg["slopes"]))
    tot = agg["monitor_tallies"]["total"]
    print(f"monitor: holds={tot['holds']} violated={tot['violated']} n/a={tot['not_applicable']} "
          f"boundedness_violations={tot['boundedness_violations']} diverged={tot['diverged']}")
    print(f"wrote {out}")
    return 1 if tot["diverged"] else 0


def cmd_verify(args) -> int:
    if args.fault is not None:
        with faults.injected(args.fault):
            results = verify.run_all()
    else:
        results = verify.run_all()
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        out = harness.resolve_out(args.out)
        path = verify.write_failures(results, out / "verify-failures.json")
        print(f"failing cases written to {path}")
        return 1
    return 0


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else None
    harness.report(args.dir, out_dir=out, formats=_formats(args.format) or harness.FORMATS)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("VRPENALTY_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "verify": cmd_verify, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except VRPenaltyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
