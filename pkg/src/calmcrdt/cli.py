"""Command-line front end.

    python -m calmcrdt run potato_ferrari --seed 3 --trace out.jsonl
    python -m calmcrdt sweep threshold --seeds 100
    python -m calmcrdt check out.jsonl
    python -m calmcrdt classify 'EXCEPT(cart.adds, cart.removes)'

Every command prints one JSON object to stdout. Exit codes: 0 ok, 1 usage
or parse error, 2 non-monotone classification (``classify`` only), 3
checker violation (divergence or a retracted threshold answer).
Traces go to ``$CALMCRDT_OUT`` (default: the working directory) unless
``--trace`` names a file.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from calmcrdt import checker, dsl
from calmcrdt.scenario import MonotoneViolation, SweepError, default_out_dir, load_scenario, run_scenario, sweep
from calmcrdt.simnet import ScenarioError, SimulationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONMONOTONE = 2
EXIT_VIOLATION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "gossip", None):
        out["gossip_mode"] = args.gossip
    if getattr(args, "write", None):
        out["write"] = args.write
    if getattr(args, "read", None):
        out["read"] = args.read
    if getattr(args, "no_prune", False):
        out["prune"] = False
    return out


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    overrides = {"seed": args.seed, **_overrides(args)}
    mode = overrides.get("gossip_mode", sc.config.gossip_mode)
    trace_path = Path(args.trace) if args.trace else default_out_dir() / f"{sc.name}-seed{args.seed}-{mode}.jsonl"
    _, report = run_scenario(sc, overrides, trace_path)
    out = report.to_dict()
    out["trace"] = str(trace_path)
    _emit(out)
    return EXIT_OK if report.convergence and not report.monotone_violations else EXIT_VIOLATION


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    overrides = _overrides(args)
    try:
        rep = sweep(sc, args.seeds, overrides)
    except MonotoneViolation as exc:
        _emit({"scenario": sc.name, "monotone_violation": str(exc)})
        return EXIT_VIOLATION
    out = rep.to_dict()
    if not {"write", "read"} & set(overrides):
        out["expected"] = {
            "convergence": sc.expect.convergence,
            "monotone_violations": sc.expect.monotone_violations,
            "anomalies": sc.expect.anomalies,
            "note": sc.expect.note,
        }
        out["matches_expected"] = rep.matches(sc.expect)
    _emit(out)
    return EXIT_OK if rep.all_converged else EXIT_VIOLATION


def cmd_check(args) -> int:
    verdict = checker.check(args.trace, args.bound)
    _emit(verdict)
    bad = not verdict["convergence"] or verdict["monotone_violations"]
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_classify(args) -> int:
    ast = dsl.parse(args.query)
    cls = dsl.classify(ast)
    qp = dsl.plan(ast, cls, stale_tolerant=not args.strict)
    _emit({"class": cls.label, "witness": cls.witness, "plan": qp.mode})
    return EXIT_OK if cls.monotone else EXIT_NONMONOTONE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="calmcrdt", description="Replicated CRDT store simulator and consistency checker.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def strategies(sp):
        sp.add_argument("--gossip", choices=["full", "delta"], help="gossip mode override")
        sp.add_argument("--write", help="write strategy override, e.g. write_quorum:2")
        sp.add_argument("--read", help="read strategy override, e.g. read_all")
        sp.add_argument("--no-prune", action="store_true", help="keep acknowledged deltas")

    run = sub.add_parser("run", help="run one scenario and report metrics")
    run.add_argument("scenario", help="scenario file, or the name of a bundled scenario")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--trace", help="trace output path (JSON lines)")
    strategies(run)
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run seeds 0..N-1 and aggregate")
    sw.add_argument("scenario")
    sw.add_argument("--seeds", type=int, default=20)
    strategies(sw)
    sw.set_defaults(func=cmd_sweep)

    ck = sub.add_parser("check", help="check a trace file")
    ck.add_argument("trace")
    ck.add_argument("--bound", type=int, default=12, help="max ops per query key for cut enumeration")
    ck.set_defaults(func=cmd_check)

    cl = sub.add_parser("classify", help="classify a query as monotone or not")
    cl.add_argument("query")
    cl.add_argument("--strict", action="store_true", help="plan as if stale lower bounds were not acceptable")
    cl.set_defaults(func=cmd_classify)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        dsl.DslError,
        ScenarioError,
        SweepError,
        SimulationError,
        checker.UnquiescedTrace,
        checker.BoundExceeded,
        OSError,
        ValueError,
    ) as exc:
        print(f"calmcrdt {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
