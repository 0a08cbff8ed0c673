import csv
import json
import subprocess
import sys

from mixedraft.harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, main

SMALL = {"protocol": "mraft", "n": 5, "workload": {"count": 10, "interval_ms": 10}, "seed": 3}


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_run_ok_writes_report_and_trace(tmp_path):
    scen = _write(tmp_path / "s.json", SMALL)
    trace, report = tmp_path / "t.jsonl", tmp_path / "r.json"
    assert main(["run", "--scenario", scen, "--trace", str(trace), "--report", str(report)]) == EXIT_OK
    rep = json.loads(report.read_text())
    assert rep["committed_requests"] == 10 and rep["violations"] == []
    first = json.loads(trace.read_text().splitlines()[0])
    assert set(first) == {"t", "kind", "from", "to", "term", "index", "digest", "note"}


def test_run_seed_override_changes_trace(tmp_path):
    scen = _write(tmp_path / "s.json", SMALL)
    digests = []
    for seed in ("5", "5", "6"):
        out = tmp_path / f"r{len(digests)}.json"
        main(["run", "--scenario", scen, "--seed", seed, "--report", str(out)])
        digests.append(json.loads(out.read_text())["trace_digest"])
    assert digests[0] == digests[1] != digests[2]


def test_run_violation_exit_code(tmp_path):
    report = tmp_path / "r.json"
    assert main(["run", "--scenario", "raft_equivocating_leader.json", "--report", str(report)]) == EXIT_VIOLATION


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path / "bad.json", dict(SMALL, n=6))
    assert main(["run", "--scenario", bad]) == EXIT_CONFIG
    assert "scenario.n" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["run", "--scenario", str(tmp_path / "junk.json")]) == EXIT_CONFIG
    assert main(["verify", "--trace", str(tmp_path / "missing.jsonl")]) == EXIT_CONFIG
    scen = _write(tmp_path / "s.json", SMALL)
    assert main(["compare", "--protocols", "paxos", "--f", "1", "--template", scen]) == EXIT_CONFIG


def test_scenario_dir_env(tmp_path, monkeypatch):
    _write(tmp_path / "mine.json", SMALL)
    monkeypatch.setenv("MRAFT_SCENARIO_DIR", str(tmp_path))
    assert main(["run", "--scenario", "mine.json", "--report", str(tmp_path / "r.json")]) == EXIT_OK


def test_verify_saved_traces(tmp_path):
    trace = tmp_path / "t.jsonl"
    main(["run", "--scenario", "raft_equivocating_leader.json", "--trace", str(trace),
          "--report", str(tmp_path / "r.json")])
    assert main(["verify", "--trace", str(trace)]) == EXIT_VIOLATION
    scen = _write(tmp_path / "s.json", SMALL)
    main(["run", "--scenario", scen, "--trace", str(trace), "--report", str(tmp_path / "r.json")])
    assert main(["verify", "--trace", str(trace)]) == EXIT_OK
    trace.write_text("garbage\n")
    assert main(["verify", "--trace", str(trace)]) == EXIT_CONFIG


def test_compare_writes_csv(tmp_path):
    scen = _write(tmp_path / "s.json", SMALL)
    out = tmp_path / "c.csv"
    assert main(["compare", "--protocols", "mraft,raft,pbft", "--f", "1,2", "--template", scen,
                 "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    assert [(r["protocol"], r["f"], r["n"]) for r in rows] == [
        ("mraft", "1", "5"), ("mraft", "2", "8"), ("raft", "1", "3"), ("raft", "2", "5"),
        ("pbft", "1", "4"), ("pbft", "2", "7"),
    ]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mixedraft", "scenarios"], capture_output=True, text=True)
    assert proc.returncode == 0 and "leader_crash_f1.json" in proc.stdout
    bad = subprocess.run([sys.executable, "-m", "mixedraft", "run"], capture_output=True, text=True)
    assert bad.returncode == 2
