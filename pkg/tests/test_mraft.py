import dataclasses

from mixedraft.core import ClusterConfig, LogEntry, Request
from mixedraft.crypto import ParticipationBitmap
from mixedraft.harness import run_scenario, scenario_from_dict
from mixedraft.mraft import MRaftOptions, MRaftReplica
from mixedraft.mraft.messages import (
    HeartBeat,
    PreVote,
    PreVoteGrant,
    ProofOfLeadership,
    RequestVote,
    Vote,
)
from mixedraft.protocol import KeyRing, sign_message

TEE = (True, True, False, False, False)
CFG = ClusterConfig.build(5, TEE)
KEYS = KeyRing.generate(TEE)


def _replica(i, leader=None, **opts):
    r = MRaftReplica(i, CFG, KEYS, MRaftOptions(**opts), leader)
    r.start(0.0)
    return r


def _signed(msg, sender):
    return sign_message(msg, KEYS, sender)


def _sent(fx, kind):
    return [(dst, m) for dst, m in fx.sends if isinstance(m, kind)]


def test_follower_with_live_leader_queues_prevote():
    r = _replica(2, leader=0)
    fx = r.on_message(1, _signed(PreVote(1, 2, 0, 0), 1), 10.0)
    assert _sent(fx, PreVoteGrant) == []
    assert r.queued_prevote is not None and r.term == 1
    fx = r.on_timer("election", 500.0)
    assert [dst for dst, _ in _sent(fx, PreVoteGrant)] == [1]
    assert r.term == 1  # pre-votes never move the term


def test_candidacy_needs_election_quorum_of_prevotes():
    r = _replica(1)
    fx = r.on_timer("election", 200.0)
    assert len(_sent(fx, PreVote)) == 4 and r.term == 0 and r.role == "follower"
    for voter in (0, 2):
        fx = r.on_message(voter, _signed(PreVoteGrant(1, voter, 1), voter), 210.0)
        assert _sent(fx, RequestVote) == [] and r.term == 0
    fx = r.on_message(3, _signed(PreVoteGrant(1, 3, 1), 3), 220.0)
    assert r.role == "candidate" and r.term == 1
    assert len(_sent(fx, RequestVote)) == 4


def test_election_completes_with_q_elec_votes():
    r = _replica(1)
    r.on_timer("election", 200.0)
    for voter in (0, 2, 3):
        r.on_message(voter, _signed(PreVoteGrant(1, voter, 1), voter), 210.0)
    for voter in (0, 2):
        r.on_message(voter, _signed(Vote(1, voter, 1), voter), 230.0)
        assert r.role == "candidate"
    fx = r.on_message(4, _signed(Vote(1, 4, 1), 4), 240.0)
    assert r.role == "leader"
    hb = _sent(fx, HeartBeat)[0][1]
    assert hb.proof.voters.popcount == 4 and hb.proof.enclave_signature is not None


def test_duplicate_votes_do_not_count_twice():
    r = _replica(1, pre_vote=False)
    r.on_timer("election", 200.0)
    for _ in range(3):
        r.on_message(2, _signed(Vote(1, 2, 1), 2), 210.0)
    r.on_message(3, _signed(Vote(1, 3, 1), 3), 210.0)
    assert r.role == "candidate"


def test_one_vote_per_term_and_stale_logs_refused():
    r = _replica(3)
    r.log.append(LogEntry(1, 1, (Request(1, b"a"),)))
    stale = r.on_message(1, _signed(RequestVote(1, 2, 0, 0), 1), 10.0)
    assert _sent(stale, Vote) == []
    first = r.on_message(0, _signed(RequestVote(0, 3, 1, 1), 0), 10.0)
    assert [dst for dst, _ in _sent(first, Vote)] == [0]
    second = r.on_message(1, _signed(RequestVote(1, 3, 1, 5), 1), 11.0)
    assert _sent(second, Vote) == []


def test_leader_ignores_claims_ahead_of_its_log():
    r = _replica(0, leader=0)
    fx = r.on_message(4, _signed(RequestVote(4, 1000, 1000, 1000), 4), 50.0)
    assert r.role == "leader" and r.term == 1 and _sent(fx, Vote) == []


def test_leader_steps_down_for_truthful_higher_term():
    r = _replica(0, leader=0)
    fx = r.on_message(1, _signed(RequestVote(1, 2, 0, 0), 1), 50.0)
    assert r.role == "follower" and r.term == 2
    assert [dst for dst, _ in _sent(fx, Vote)] == [1]


def test_bad_signature_is_evidence():
    r = _replica(2, leader=0)
    forged = dataclasses.replace(_signed(PreVote(1, 2, 0, 0), 1), next_term=3)
    fx = r.on_message(1, forged, 10.0)
    assert r.evidence and any(e[0] == "evidence" for e in fx.events)


def test_idle_wait_non_tee_never_stands():
    r = _replica(3, non_tee_leader="idle_wait")
    fx = r.on_timer("election", 600.0)
    assert _sent(fx, PreVote) == [] and _sent(fx, RequestVote) == []


def test_leadership_proof_validation():
    r = _replica(2)
    votes = tuple(_signed(Vote(3, v, 4), v) for v in (1, 2, 3, 4))
    ok = ProofOfLeadership(3, 4, ParticipationBitmap.from_members(5, [1, 2, 3, 4]), votes)
    assert r.validate_leadership(ok, 3, 4)
    short = ProofOfLeadership(5, 4, ParticipationBitmap.from_members(5, [1, 2, 3]), votes[:3])
    assert not r.validate_leadership(short, 5, 4)
    padded = ProofOfLeadership(6, 3, ParticipationBitmap.from_members(5, [0, 1, 2, 3]), ())
    assert not r.validate_leadership(padded, 6, 3)
    unsigned_tee = ProofOfLeadership(7, 0, ParticipationBitmap.from_members(5, [0, 1, 2, 3]), ())
    assert not r.validate_leadership(unsigned_tee, 7, 0)


def _run(**kw):
    raw = {"protocol": "mraft", "n": 5, "tee": list(TEE), "workload": {"count": 20, "interval_ms": 20},
           "run_ms": 3000}
    raw.update(kw)
    return run_scenario(scenario_from_dict(raw))


def test_cold_start_elects_tee_leader_and_commits():
    for seed in range(1, 11):
        rep = _run(initial_leader=None, seed=seed)
        assert rep.violations == []
        assert rep.committed_requests == 20
        assert rep.leader_history[0]["tee"]


def test_leader_crash_hands_over_to_tee_survivor():
    for seed in range(1, 11):
        rep = _run(seed=seed, faults=[{"fault": "crash", "node": 0, "at": 400}])
        assert rep.violations == []
        assert rep.committed_requests == 20
        assert rep.leader_recovery[0]["new_leader"] == 1


def test_tee_leader_replicates_with_certificates():
    rep = _run(seed=3)
    assert rep.violations == [] and rep.committed_requests == 20
    assert rep.messages_by_type.get("Cert", 0) > 0
    assert "CoSiAnnounce" not in rep.messages_by_type
    assert rep.messages_per_commit == 12.0


def test_non_tee_leader_replicates_with_cosi():
    rep = _run(seed=3, initial_leader=4)
    assert rep.violations == [] and rep.committed_requests == 20
    assert rep.messages_by_type.get("CoSiAnnounce", 0) > 0
    assert rep.messages_by_type.get("CoSig", 0) > 0
    assert "Cert" not in rep.messages_by_type


def test_idle_wait_only_elects_tee_nodes():
    for seed in range(1, 11):
        rep = _run(seed=seed, non_tee_leader="idle_wait", faults=[{"fault": "crash", "node": 0, "at": 400}])
        assert rep.violations == [] and rep.committed_requests == 20
        assert all(h["tee"] for h in rep.leader_history)
