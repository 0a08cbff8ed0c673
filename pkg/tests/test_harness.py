import csv
import io

import pytest

from mixedraft.core import ConfigError
from mixedraft.harness import load_scenario, run_scenario, scenario_from_dict
from mixedraft.harness.compare import COLUMNS, compare, loglog_slope, power_fit, rows_to_csv, scenario_for
from mixedraft.harness.runner import LatencyStats
from mixedraft.harness.workload import generate_workload
from mixedraft.invariants import verify_trace

SMALL = {"protocol": "mraft", "n": 5, "workload": {"count": 10, "interval_ms": 10}, "seed": 3}


@pytest.mark.parametrize("patch,fragment", [
    ({"n": 6}, "scenario.n"),
    ({"protocol": "paxos"}, "scenario.protocol"),
    ({"tee": [True, False, False, False, False]}, "scenario.tee"),
    ({"tee": [True, True]}, "scenario.tee"),
    ({"q_elec": 9}, "scenario.q_elec"),
    ({"initial_leader": 7}, "scenario.initial_leader"),
    ({"bogus": 1}, "unknown"),
    ({"workload": {"count": -1}}, "scenario.workload"),
    ({"tee_timeout_ms": [300, 100]}, "scenario.tee_timeout_ms"),
    ({"latency": [[0, 1], [1, 0]]}, "scenario.latency"),
])
def test_scenario_validation_names_the_field(patch, fragment):
    with pytest.raises(ConfigError, match=fragment):
        scenario_from_dict(dict(SMALL, **patch))


def test_scenario_round_trips_through_json():
    s = scenario_from_dict(dict(SMALL, faults=[{"fault": "crash", "node": 1, "at": 50}]))
    assert scenario_from_dict(s.to_json()) == s


def test_same_seed_same_digest():
    a = run_scenario(scenario_from_dict(SMALL))
    b = run_scenario(scenario_from_dict(SMALL))
    c = run_scenario(scenario_from_dict(dict(SMALL, seed=4)))
    assert a.trace_digest == b.trace_digest
    assert a.trace_digest != c.trace_digest


def test_saved_trace_verifies(tmp_path):
    path = tmp_path / "t.jsonl"
    rep = run_scenario(scenario_from_dict(SMALL), trace_path=str(path))
    assert rep.violations == []
    assert verify_trace(str(path)) == []


def test_workload_is_seeded():
    s = scenario_from_dict(dict(SMALL, workload={"count": 5, "interval_ms": 2, "payload": {"random_bytes": 40}}))
    a = generate_workload(s.workload, 1)
    assert a == generate_workload(s.workload, 1)
    assert a != generate_workload(s.workload, 2)
    assert [t for t, _ in a] == [0.0, 2.0, 4.0, 6.0, 8.0]
    assert all(len(r.payload) == 40 for _, r in a)
    digests = generate_workload(scenario_from_dict(SMALL).workload, 1)
    assert all(len(r.payload) == 32 for _, r in digests)


def test_latency_stats_nearest_rank():
    st = LatencyStats.of([float(i) for i in range(1, 101)])
    assert (st.count, st.mean, st.median, st.p99) == (100, 50.5, 50.5, 99.0)
    assert LatencyStats.of([]).mean is None


def test_scenario_for_resizes_template():
    tpl = load_scenario("table1_n5.json")
    assert scenario_for(tpl, "pbft", 2).n == 7
    assert scenario_for(tpl, "raft", 2).n == 5
    assert scenario_for(tpl, "mraft", 6).n == 20


def test_compare_rows_and_csv():
    tpl = scenario_from_dict(dict(SMALL, name="tpl"))
    rows = compare(["mraft", "pbft"], [1], tpl)
    assert [(r["protocol"], r["n"], r["messages_per_commit"]) for r in rows] == [("mraft", 5, 12.0), ("pbft", 4, 27.0)]
    parsed = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
    assert list(parsed[0]) == list(COLUMNS)
    assert parsed[1]["messages_per_commit"] == "27.0"


def test_power_fit_and_slope():
    ns = [4, 7, 13]
    ys = [(n - 1) + 2 * n * (n - 1) for n in ns]
    _, dev = power_fit(ns, ys, 2)
    assert dev < 0.10
    c, dev = power_fit([5, 11, 20], [12, 30, 57], 1)
    assert dev < 0.10 and 2.5 < c < 3.0
    assert loglog_slope([1, 2, 4], [3, 6, 12]) == pytest.approx(1.0)


def test_default_cluster_size_tolerates_one_fault():
    assert [scenario_from_dict({"protocol": p}).n for p in ("mraft", "raft", "pbft")] == [5, 3, 4]
