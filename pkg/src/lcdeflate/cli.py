"""Command-line front end: ``lcdeflate run | sweep | check``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .driver import run
from .io import export_solution, write_json
from .mesh import ConfigurationError
from .problems import PRESETS, get_preset, override
from .selfcheck import run_checks
from .deflation import DeflationConfig
from .sweeps import SweepSpec, sweep, sweep_deflation, write_sweep_csv

log = logging.getLogger("lcdeflate")


def _parse_set(items):
    out = []
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        out.append((key.strip(), value.strip()))
    return out


def build_preset(args, deflation_flags=True):
    preset = get_preset(args.preset)
    if deflation_flags and args.alpha is not None:
        preset = override(preset, "deflation.alpha", args.alpha)
    if deflation_flags and args.p is not None:
        preset = override(preset, "deflation.p", args.p)
    for key, value in _parse_set(args.set):
        preset = override(preset, key, value)
    return preset


def cmd_run(args) -> int:
    preset = build_preset(args)
    report = run(preset, args.levels)
    os.makedirs(args.out, exist_ok=True)
    write_json(report.to_dict(), os.path.join(args.out, "report.json"))
    for s in report.solutions:
        export_solution(s.state, os.path.join(args.out, f"solution_{s.id}.csv"))
    for s in report.solutions:
        flag = "  (warning: continuation failed)" if s.warning else ""
        print(f"solution {s.id}: energy {s.energy:.6f}  found on level {s.discovered_level} ({s.provenance}){flag}")
    print(f"anonymous Newton iterations per level: {report.anonymous_iterations}")
    failed = not report.solutions or any(s.warning for s in report.solutions)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    preset = build_preset(args, deflation_flags=False)
    base = sweep_deflation(preset)
    try:
        deflation = DeflationConfig(
            base.p if args.p is None else args.p,
            base.alpha if args.alpha is None else args.alpha,
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    spec = SweepSpec(preset, args.param, args.lo, args.hi, args.steps, args.levels, deflation)
    result = sweep(spec)
    os.makedirs(args.out, exist_ok=True)
    write_sweep_csv(result, os.path.join(args.out, "sweep.csv"))
    summary = {
        "parameter": args.param,
        "counts": {f"{v:.17g}": n for v, n in sorted(result.counts.items())},
        "bracket": result.bracket,
        "estimate": result.estimate,
        "failures": result.failures,
    }
    write_json(summary, os.path.join(args.out, "sweep.json"))
    for v, n in sorted(result.counts.items()):
        print(f"{args.param} = {v:.6g}: {n} branch(es)")
    print(f"bifurcation bracket: {result.bracket}")
    return 1 if result.failures or result.bracket is None else 0


def cmd_check(args) -> int:
    ok = True
    for name, passed, value in run_checks(args.seed):
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:32s} {value:.3e}")
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcdeflate", description="Multiple liquid crystal equilibria by deflated Newton with nested iteration.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--preset", required=True, choices=sorted(PRESETS))
        p.add_argument("--levels", type=int, default=None, help="finest refinement level (default: preset, 3)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a preset field by dotted key")
        p.add_argument("--out", default="out")
        p.add_argument("--alpha", type=float, help="deflation shift")
        p.add_argument("--p", type=float, help="deflation power")

    p = sub.add_parser("run", help="nested iteration with deflation for one preset")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser(
        "sweep",
        help="parameter sweep across a bifurcation",
        description="Freedericksz sweeps deflate with alpha = 10 unless --alpha is given; other presets use their own settings.",
    )
    common(p)
    p.add_argument("--param", required=True, choices=["K2", "V"])
    p.add_argument("--from", dest="lo", type=float, required=True)
    p.add_argument("--to", dest="hi", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="finite-difference and dense-oracle self tests")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "sweep" and args.levels is None:
        args.levels = 3
    try:
        return args.func(args)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
