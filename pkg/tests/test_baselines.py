import pytest

from mixedraft.baselines import pbft_cluster, raft_cluster
from mixedraft.baselines.raft import RaftReplica, RequestVote, Vote
from mixedraft.harness import run_scenario, scenario_from_dict
from mixedraft.harness.scenario import nodes_for


def _fault_free(protocol, f, count=30):
    return run_scenario(scenario_from_dict({
        "protocol": protocol, "f": f, "n": nodes_for(protocol, f), "latency": "table1",
        "workload": {"count": count, "interval_ms": 5}, "seed": 1,
    }))


def test_cluster_sizes_and_quorums():
    r = raft_cluster(2)
    assert (r.n, r.q_rep, r.q_elec) == (5, 3, 3)
    assert raft_cluster(6, n=20).q_rep == 11
    p = pbft_cluster(2)
    assert (p.n, p.q_rep) == (7, 5)


@pytest.mark.parametrize("n", [5, 11, 20])
def test_raft_message_count(n):
    rep = run_scenario(scenario_from_dict({
        "protocol": "raft", "n": n, "workload": {"count": 30, "interval_ms": 5}, "seed": 1,
    }))
    assert rep.violations == [] and rep.committed_requests == 30
    assert rep.messages_per_commit == 3 * (n - 1)


@pytest.mark.parametrize("f,n", [(1, 4), (2, 7), (4, 13)])
def test_pbft_message_count(f, n):
    rep = _fault_free("pbft", f)
    assert rep.n == n
    assert rep.violations == [] and rep.committed_requests == 30
    assert rep.messages_per_commit == (n - 1) + 2 * n * (n - 1)


def test_raft_election_needs_majority():
    cfg = raft_cluster(2)
    r = RaftReplica(1, cfg)
    r.start(0.0)
    fx = r.on_timer("election", 300.0)
    assert r.role == "candidate" and r.term == 1
    assert sum(isinstance(m, RequestVote) for _, m in fx.sends) == 4
    r.on_message(2, Vote(1, 2, 1), 310.0)
    assert r.role == "candidate"
    r.on_message(3, Vote(1, 3, 1), 320.0)
    assert r.role == "leader"


def test_raft_breaks_under_one_equivocating_leader():
    broken = 0
    for seed in range(1, 11):
        rep = run_scenario(scenario_from_dict({
            "protocol": "raft", "f": 1, "initial_leader": 0, "seed": seed,
            "workload": {"count": 10, "interval_ms": 40}, "run_ms": 1500,
            "faults": [{"fault": "byzantine", "node": 0, "strategy": "equivocate"}],
        }))
        broken += any(v["check"] == "AGREEMENT" for v in rep.violations)
    assert broken == 10


def test_raft_survives_crash_faults():
    for seed in range(1, 11):
        rep = run_scenario(scenario_from_dict({
            "protocol": "raft", "f": 2, "initial_leader": 0, "seed": seed,
            "workload": {"count": 20, "interval_ms": 40}, "run_ms": 4000,
            "faults": [{"fault": "crash", "node": 0, "at": 300}, {"fault": "crash", "node": 3, "at": 500}],
        }))
        assert rep.violations == []
