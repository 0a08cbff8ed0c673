"""Cross-protocol comparison at equal fault thresholds."""

from __future__ import annotations

import csv
import io
import math
from typing import Dict, Iterable, List, Sequence, TextIO, Tuple

from .runner import run_scenario
from .scenario import Scenario, nodes_for, scenario_from_dict

COLUMNS = (
    "protocol", "f", "n", "messages_per_commit", "mean_commit_latency_ms",
    "median_commit_latency_ms", "p99_commit_latency_ms", "committed_batches",
    "committed_requests", "throughput_rps", "violations",
)


def scenario_for(template: Scenario, protocol: str, f: int) -> Scenario:
    """``template`` resized to ``protocol`` at fault threshold ``f`` (fault-free)."""
    raw = template.to_json()
    raw.update(protocol=protocol, f=f, n=nodes_for(protocol, f), tee=None, faults=[],
               q_elec=None, initial_leader=0, name=f"{template.name}:{protocol}:f{f}")
    if isinstance(raw["latency"], list):
        raw["latency"] = "table1"
    return scenario_from_dict(raw)


def compare(protocols: Sequence[str], fs: Sequence[int], template: Scenario) -> List[Dict[str, object]]:
    rows = []
    for protocol in protocols:
        for f in fs:
            rep = run_scenario(scenario_for(template, protocol, f))
            lat = rep.commit_latency_ms
            rows.append({
                "protocol": protocol,
                "f": f,
                "n": rep.n,
                "messages_per_commit": rep.messages_per_commit,
                "mean_commit_latency_ms": lat.mean,
                "median_commit_latency_ms": lat.median,
                "p99_commit_latency_ms": lat.p99,
                "committed_batches": rep.committed_batches,
                "committed_requests": rep.committed_requests,
                "throughput_rps": rep.throughput_rps,
                "violations": len(rep.violations),
            })
    return rows


def write_csv(rows: Iterable[Dict[str, object]], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row[k] is None else row[k]) for k in COLUMNS})


def rows_to_csv(rows: Iterable[Dict[str, object]]) -> str:
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def power_fit(ns: Sequence[float], ys: Sequence[float], k: float) -> Tuple[float, float]:
    """Fit ``y = c * n**k`` in log space.

    Returns ``c`` (geometric mean of ``y / n**k``) and the worst relative
    deviation of any point from the fit.
    """
    ratios = [y / n ** k for n, y in zip(ns, ys)]
    c = math.exp(sum(math.log(r) for r in ratios) / len(ratios))
    return c, max(abs(r / c - 1.0) for r in ratios)


def loglog_slope(ns: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log n (the growth exponent)."""
    xs = [math.log(n) for n in ns]
    ls = [math.log(y) for y in ys]
    mx, my = sum(xs) / len(xs), sum(ls) / len(ls)
    return sum((x - mx) * (y - my) for x, y in zip(xs, ls)) / sum((x - mx) ** 2 for x in xs)
