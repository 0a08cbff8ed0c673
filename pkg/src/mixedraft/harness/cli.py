"""Command-line entry point: ``run``, ``compare``, ``verify`` and ``scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from ..adversary import canned_scenarios
from ..core import ConfigError
from ..invariants import verify_trace
from .compare import compare, write_csv
from .runner import run_scenario
from .scenario import PROTOCOLS, SCENARIO_DIR_ENV, load_scenario, scenario_dir

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2

log = logging.getLogger("mixedraft")


def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mixedraft",
        description="Deterministic simulator for mixed-fault consensus.",
        epilog=f"Relative scenario paths are also looked up in ${SCENARIO_DIR_ENV} "
               f"(default: the bundled scenarios).",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and check every invariant")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--trace", help="write the JSON-lines trace here")
    run.add_argument("--report", help="write the JSON report here (default: stdout)")

    cmp_ = sub.add_parser("compare", help="compare protocols at equal fault thresholds")
    cmp_.add_argument("--protocols", type=_csv_list, default=list(PROTOCOLS))
    cmp_.add_argument("--f", type=lambda s: _csv_list(s, int), default=[1, 3, 6])
    cmp_.add_argument("--template", required=True, help="scenario used as template")
    cmp_.add_argument("--out", default="-", help="CSV output path ('-' for stdout)")

    ver = sub.add_parser("verify", help="re-check the invariants on a saved trace")
    ver.add_argument("--trace", required=True)

    sub.add_parser("scenarios", help="list bundled and canned scenarios")
    return p


def _cmd_run(args) -> int:
    scen = load_scenario(args.scenario)
    if args.seed is not None:
        scen = scen.with_seed(args.seed)
    report = run_scenario(scen, trace_path=args.trace)
    text = report.dumps()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    lat = report.commit_latency_ms.mean
    print(
        f"{scen.name} seed={scen.seed}: {report.committed_batches} batches, "
        f"{report.committed_requests} requests, "
        f"{report.messages_per_commit if report.messages_per_commit is not None else '-'} msgs/commit, "
        f"mean latency {'-' if lat is None else f'{lat:.2f}'} ms, "
        f"{len(report.violations)} violation(s), trace {report.trace_digest[:16]}",
        file=sys.stderr,
    )
    for v in report.violations:
        print(f"  {v['check']} at t={v['t']:.3f}: {v['detail']}", file=sys.stderr)
    return EXIT_VIOLATION if report.violations else EXIT_OK


def _cmd_compare(args) -> int:
    bad = [p for p in args.protocols if p not in PROTOCOLS]
    if bad:
        raise ConfigError(f"--protocols: unknown protocol(s) {', '.join(bad)}")
    if any(f < 1 for f in args.f):
        raise ConfigError("--f: fault thresholds must be >= 1")
    template = load_scenario(args.template)
    rows = compare(args.protocols, args.f, template)
    if args.out == "-":
        write_csv(rows, sys.stdout)
    else:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
    return EXIT_VIOLATION if any(r["violations"] for r in rows) else EXIT_OK


def _cmd_verify(args) -> int:
    try:
        violations = verify_trace(args.trace)
    except FileNotFoundError:
        raise ConfigError(f"{args.trace}: trace file not found") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for v in violations:
        print(f"{v.check} at t={v.t:.3f}: {v.detail}")
    print(f"{args.trace}: {len(violations)} violation(s)", file=sys.stderr)
    return EXIT_VIOLATION if violations else EXIT_OK


def _cmd_scenarios(args) -> int:
    d = scenario_dir()
    print(f"scenario directory: {d}")
    for path in sorted(d.glob("*.json")):
        print(f"  {path.name}")
    print("canned adversarial scenarios (per f): " + ", ".join(sorted(canned_scenarios(1))))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "compare": _cmd_compare, "verify": _cmd_verify,
               "scenarios": _cmd_scenarios}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
