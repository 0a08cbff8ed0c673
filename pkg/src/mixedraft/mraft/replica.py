"""MRaft replica: TEE-favoured election, certificate replication, CoSi fallback."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Set, Tuple

from .. import crypto
from ..core import (
    ClusterConfig,
    LogEntry,
    NodeId,
    ReplicatedLog,
    Request,
    chain_digest,
    is_more_up_to_date,
    is_more_up_to_date_index_only,
)
from ..protocol import KeyRing, Message, NotLeader, Replica
from .messages import (
    Ack,
    Append,
    Cert,
    CommitCertificate,
    CoSiAnnounce,
    CoSiChallengeMsg,
    CoSiCommitMsg,
    CoSig,
    CoSigProof,
    CoSiResponseMsg,
    EntriesResponse,
    FetchEntries,
    HeartBeat,
    PreVote,
    PreVoteGrant,
    ProofOfLeadership,
    RequestVote,
    Vote,
    cosi_statement,
)

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"


@dataclass
class MRaftOptions:
    tee_timeout_ms: Tuple[float, float] = (150.0, 300.0)
    non_tee_timeout_ms: Tuple[float, float] = (450.0, 600.0)
    heartbeat_fraction: float = 1.0 / 3.0
    batch_max_bytes: int = 20480
    batch_timeout_ms: float = 1.0
    non_tee_leader: str = "cosi"  # or "idle_wait"
    vote_rule: str = "term_index"  # or "index_only"
    cosi_phase_timeout_ms: float = 600.0
    max_backoff_steps: int = 3
    pre_vote: bool = True
    fetch_max_entries: int = 256
    fetch_retry_ms: float = 100.0

    @property
    def heartbeat_interval_ms(self) -> float:
        floor = min(self.tee_timeout_ms[0], self.non_tee_timeout_ms[0])
        return floor * self.heartbeat_fraction


@dataclass
class CoSiRound:
    number: int
    index: int
    digest: bytes
    entry: LogEntry
    participants: Set[NodeId]
    secret: int
    commitments: Dict[NodeId, int] = field(default_factory=dict)
    responses: Dict[NodeId, int] = field(default_factory=dict)
    phase: str = "commit"
    members: Tuple[NodeId, ...] = ()
    aggregate: int = 0
    challenge: int = 0
    bad: Set[NodeId] = field(default_factory=set)


class MRaftReplica(Replica):
    protocol = "mraft"

    def __init__(
        self,
        node_id: NodeId,
        config: ClusterConfig,
        keys: KeyRing,
        options: Optional[MRaftOptions] = None,
        initial_leader: Optional[NodeId] = None,
    ):
        super().__init__(node_id, config, keys)
        self.options = options or MRaftOptions()
        self.initial_leader = initial_leader
        self.role = FOLLOWER
        self.term = 0
        self.voted_for: Optional[Tuple[int, NodeId]] = None
        self.leader_id: Optional[NodeId] = None
        self.leader_alive = False
        self.queued_vote: Optional[RequestVote] = None
        self.queued_prevote: Optional[PreVote] = None
        self.prevote_term: Optional[int] = None
        self.prevotes: Set[NodeId] = set()
        self.retries = 0
        self.log = ReplicatedLog()
        self.request_index: Dict[int, int] = {}
        # leader bookkeeping
        self.match_index: Dict[NodeId, int] = {}
        self.pending: list = []
        self.pending_ids: Set[int] = set()
        self.pending_bytes = 0
        self.batch_armed = False
        self.last_sent: Dict[NodeId, float] = {}
        self.leadership_proof: Optional[ProofOfLeadership] = None
        self.cosi_round: Optional[CoSiRound] = None
        self.cosi_counter = 0
        self.cosi_excluded: Set[NodeId] = set()
        # commit proofs by index (Cert or CoSig), sorted index list for lookup
        self.proofs: Dict[int, Any] = {}
        self.proof_indices: list = []
        self.pending_proof: Any = None
        # candidate bookkeeping
        self.votes: Dict[NodeId, Optional[Vote]] = {}
        # follower bookkeeping
        self.cosi_secrets: Dict[Tuple[int, int], Tuple[int, int, bytes]] = {}
        self.cosi_accepted: Dict[Tuple[int, int], bytes] = {}
        self.verified_leaders: Set[Tuple[int, NodeId]] = set()
        self.last_fetch: Tuple[int, float] = (0, float("-inf"))
        self.evidence: list = []

    # -- introspection ----------------------------------------------------------
    @property
    def is_leader(self) -> bool:
        return self.role == LEADER

    @property
    def current_term(self) -> int:
        return self.term

    @property
    def timeout_interval(self) -> Tuple[float, float]:
        o = self.options
        return o.tee_timeout_ms if self.is_tee else o.non_tee_timeout_ms

    @property
    def may_stand(self) -> bool:
        return self.is_tee or self.options.non_tee_leader != "idle_wait"

    @property
    def uses_cosi(self) -> bool:
        return not self.is_tee

    def _up_to_date(self, a: Tuple[int, int], b: Tuple[int, int]) -> bool:
        if self.options.vote_rule == "index_only":
            return is_more_up_to_date_index_only(a, b)
        return is_more_up_to_date(a, b)

    # -- small helpers ------------------------------------------------------------
    def _arm_election(self, retries: int = 0) -> None:
        lo, hi = self.timeout_interval
        # randomised backoff: each failed candidacy widens the window so that
        # candidates stuck in lockstep drift apart
        hi += min(retries, self.options.max_backoff_steps) * (hi - lo)
        self._fx.set_timer("election", lo, hi)

    def _set_role(self, role: str) -> None:
        self.role = role
        d = self.log.digest(self.log.last_index)
        self._fx.note("role", self.term, self.log.last_index, d, role)

    def _evidence(self, who: NodeId, what: str) -> None:
        self.evidence.append((who, what))
        self._fx.note("evidence", self.term, 0, b"", f"node={who} {what}")

    def _append(self, entry: LogEntry) -> bytes:
        prev = self.log.digest(entry.index - 1)
        d = self.log.append(entry)
        for rid in entry.request_ids:
            self.request_index[rid] = entry.index
        self._fx.note("append", entry.term, entry.index, d, prev.hex())
        return d

    def _truncate(self, index: int) -> None:
        for e in self.log.entries[index - 1 :]:
            for rid in e.request_ids:
                self.request_index.pop(rid, None)
        self.log.truncate_from(index)
        self._fx.note("truncate", self.term, index)

    def _commit(self, index: int, proof: Any) -> None:
        if proof is not None and proof.index not in self.proofs:
            self.proofs[proof.index] = proof
            bisect.insort(self.proof_indices, proof.index)
        for e in self.log.commit_to(index):
            self._fx.note("commit", e.term, e.index, self.log.digest(e.index))
            self._fx.commits.append(e)

    def _fetch(self, from_index: int, now: float) -> None:
        if self.leader_id is None or self.leader_id == self.id:
            return
        last_from, at = self.last_fetch
        if last_from == from_index and now - at < self.options.fetch_retry_ms:
            return
        self.last_fetch = (from_index, now)
        self.send(self.leader_id, FetchEntries(term=self.term, from_index=from_index))

    def _leader_contact(self) -> None:
        self.leader_alive = True
        self.queued_vote = None
        self.queued_prevote = None
        self.prevote_term = None
        self.retries = 0
        self._arm_election()

    def _adopt_term(self, term: int) -> None:
        if term > self.term:
            self.term = term
            self.leader_id = None
            self.prevote_term = None
            if self.role != FOLLOWER:
                self._step_down()

    def _step_down(self) -> None:
        was_leader = self.role == LEADER
        self._set_role(FOLLOWER)
        self.votes = {}
        if was_leader:
            self._fx.cancel_timer("heartbeat")
            self._fx.cancel_timer("batch")
            self._fx.cancel_timer("cosi")
            self.batch_armed = False
            self.pending, self.pending_ids, self.pending_bytes = [], set(), 0
            self.cosi_round = None
        self._arm_election()

    # -- dispatch -------------------------------------------------------------------
    def _on_start(self, now: float) -> None:
        if self.initial_leader is not None:
            self.term = 1
            self.leader_id = self.initial_leader
            self.leader_alive = True
            if self.initial_leader == self.id:
                self._set_role(LEADER)
                self._init_leader(now)
                return
            self._set_role(FOLLOWER)
        self._arm_election()

    def _on_message(self, src: NodeId, msg: Message, now: float) -> None:
        if not self.verify(msg, src):
            self._evidence(src, f"bad signature on {type(msg).__name__}")
            return
        handler = self._handlers.get(type(msg))
        if handler is not None:
            handler(self, src, msg, now)

    def _on_timer(self, name: str, now: float) -> None:
        if name == "election":
            self._election_timeout(now)
        elif name == "heartbeat" and self.role == LEADER:
            self._heartbeat_tick(now)
        elif name == "batch" and self.role == LEADER:
            self.batch_armed = False
            self._flush(now)
        elif name == "cosi" and self.role == LEADER:
            self._cosi_timeout(now)

    # -- election --------------------------------------------------------------------
    def _election_timeout(self, now: float) -> None:
        if self.role == LEADER:
            return
        self.leader_alive = False
        q, pq = self.queued_vote, self.queued_prevote
        self.queued_vote = self.queued_prevote = None
        if self.role == FOLLOWER and self.prevote_term is None:
            if q is not None and self._grantable(q):
                self._grant(q)
                self._arm_election()
                return
            if pq is not None and self._prevote_grantable(pq):
                self._grant_prevote(pq)
                self._arm_election()
                return
        failed = self.role == CANDIDATE or self.prevote_term is not None
        self.retries = self.retries + 1 if failed else 0
        if not self.may_stand:
            self._arm_election()
        elif self.options.pre_vote:
            self._start_prevote(now)
        else:
            self._become_candidate(now)

    def _start_prevote(self, now: float) -> None:
        if self.prevote_term != self.term + 1:
            # grants for the same next term stay valid across retries
            self.prevote_term = self.term + 1
            self.prevotes = set()
        self.prevotes.add(self.id)
        self._arm_election(self.retries)
        self.broadcast(
            PreVote(
                candidate=self.id,
                next_term=self.prevote_term,
                last_log_term=self.log.last_term,
                last_log_index=self.log.last_index,
            )
        )
        if len(self.prevotes) >= self.config.q_elec:
            self._become_candidate(now)

    def _become_candidate(self, now: float) -> None:
        self.prevote_term = None
        self.prevotes = set()
        self.term += 1
        self.voted_for = (self.term, self.id)
        self.leader_id = None
        self.votes = {self.id: self._own_vote()}
        self._set_role(CANDIDATE)
        self._arm_election(self.retries)
        self.broadcast(
            RequestVote(
                candidate=self.id,
                new_term=self.term,
                last_log_term=self.log.last_term,
                last_log_index=self.log.last_index,
            )
        )
        if len(self.votes) >= self.config.q_elec:
            self._become_leader(now)

    def _own_vote(self) -> Vote:
        return self.sign(Vote(term=self.term, voter=self.id, candidate=self.id))

    def _grantable(self, rv: RequestVote) -> bool:
        if rv.new_term <= self.term:
            return False
        if self.voted_for is not None and self.voted_for[0] >= rv.new_term:
            return False
        return self._up_to_date((rv.last_log_term, rv.last_log_index), self.log.position)

    def _grant(self, rv: RequestVote) -> None:
        self._adopt_term(rv.new_term)
        self.term = rv.new_term
        self.voted_for = (rv.new_term, rv.candidate)
        self.send(rv.candidate, Vote(term=rv.new_term, voter=self.id, candidate=rv.candidate))

    def _on_request_vote(self, src: NodeId, rv: RequestVote, now: float) -> None:
        if rv.candidate != src or rv.new_term <= self.term:
            return
        pos = (rv.last_log_term, rv.last_log_index)
        # A claim strictly ahead of a sitting leader's log can only be a lie.
        # Otherwise enough nodes have given up on us that we cannot commit
        # anyway: step down and let the election run.
        if self.role == LEADER and not self._up_to_date(self.log.position, pos):
            return
        if self.role == FOLLOWER and self.leader_alive:
            if self._should_queue(self.queued_vote, pos, rv.candidate, rv.new_term):
                self.queued_vote = rv
            return
        # own timeout has elapsed: the candidate's term supersedes ours
        self._adopt_term(rv.new_term)
        if self.role == CANDIDATE:
            self._step_down()
        if self._grantable_after_adopt(rv):
            self.voted_for = (rv.new_term, rv.candidate)
            self.send(rv.candidate, Vote(term=rv.new_term, voter=self.id, candidate=rv.candidate))
            self._arm_election()

    def _should_queue(self, q, pos: Tuple[int, int], candidate: NodeId, term: int) -> bool:
        """Keep at most one request while the leader is alive: the most up-to-date one."""
        if not self._up_to_date(pos, self.log.position):
            return False
        if q is None:
            return True
        q_pos = (q.last_log_term, q.last_log_index)
        q_term = q.new_term if isinstance(q, RequestVote) else q.next_term
        # a retry from the queued candidate supersedes its earlier term
        if q.candidate == candidate and term > q_term:
            return True
        return self._up_to_date(pos, q_pos) and not self._up_to_date(q_pos, pos)

    def _on_prevote(self, src: NodeId, pv: PreVote, now: float) -> None:
        if pv.candidate != src or pv.next_term <= self.term or self.role == LEADER:
            return
        pos = (pv.last_log_term, pv.last_log_index)
        if self.role == FOLLOWER and self.leader_alive:
            if self._should_queue(self.queued_prevote, pos, pv.candidate, pv.next_term):
                self.queued_prevote = pv
            return
        if self._prevote_grantable(pv):
            self._grant_prevote(pv)
            if self.prevote_term == pv.next_term and self._yields_to(pv):
                # two pre-candidates for the same term would split the real vote
                self.prevote_term = None
                self.prevotes = set()
                lo, hi = self.timeout_interval
                self._fx.set_timer("election", hi, 2 * hi - lo)  # give the rival a full window

    def _yields_to(self, pv: PreVote) -> bool:
        """Tie-break between concurrent pre-candidates: TEE first, then lower id."""
        theirs = (pv.last_log_term, pv.last_log_index)
        if not self._up_to_date(theirs, self.log.position):
            return False
        if self._up_to_date(self.log.position, theirs):  # equally up to date
            mine = (not self.is_tee, self.id)
            return (not self.config.tee[pv.candidate], pv.candidate) < mine
        return True

    def _prevote_grantable(self, pv: PreVote) -> bool:
        if pv.next_term <= self.term:
            return False
        return self._up_to_date((pv.last_log_term, pv.last_log_index), self.log.position)

    def _grant_prevote(self, pv: PreVote) -> None:
        self.send(pv.candidate, PreVoteGrant(term=pv.next_term, voter=self.id, candidate=pv.candidate))

    def _on_prevote_grant(self, src: NodeId, g: PreVoteGrant, now: float) -> None:
        if g.voter != src or g.candidate != self.id or self.prevote_term != g.term:
            return
        if self.role == LEADER or g.term != self.term + 1:
            return
        self.prevotes.add(src)
        if len(self.prevotes) >= self.config.q_elec:
            self._become_candidate(now)

    def _grantable_after_adopt(self, rv: RequestVote) -> bool:
        if rv.new_term != self.term:
            return False
        if self.voted_for is not None and self.voted_for[0] >= rv.new_term:
            return False
        return self._up_to_date((rv.last_log_term, rv.last_log_index), self.log.position)

    def _on_vote(self, src: NodeId, v: Vote, now: float) -> None:
        if self.role != CANDIDATE or v.voter != src or v.term != self.term or v.candidate != self.id:
            return
        if src in self.votes:
            return
        self.votes[src] = v
        if len(self.votes) >= self.config.q_elec:
            self._become_leader(now)

    def _become_leader(self, now: float) -> None:
        voters = crypto.ParticipationBitmap.from_members(self.config.n, self.votes)
        proof = ProofOfLeadership(term=self.term, candidate=self.id, voters=voters)
        if self.is_tee:
            kp = self.keys.enclave[self.id]
            sig = crypto.sign(kp.sk, proof.signed_body(), "leadership", self.keys.group)
            proof = ProofOfLeadership(self.term, self.id, voters, (), sig)
        else:
            votes = tuple(self.votes[v] for v in sorted(self.votes))
            proof = ProofOfLeadership(self.term, self.id, voters, votes, None)
        self.leadership_proof = proof
        self.verified_leaders.add((self.term, self.id))
        self.leader_id = self.id
        self.leader_alive = True
        self.queued_vote = self.queued_prevote = None
        self.votes = {}
        self._set_role(LEADER)
        self._fx.cancel_timer("election")
        self._init_leader(now)
        self._send_heartbeats(now, self.config.others(self.id))
        # A fresh entry of the new term lets earlier entries commit.
        self._propose(LogEntry(term=self.term, index=self.log.last_index + 1), now)

    def _init_leader(self, now: float) -> None:
        self.match_index = {p: 0 for p in self.config.others(self.id)}
        self.last_sent = {p: now for p in self.config.others(self.id)}
        self.cosi_round = None
        self.cosi_excluded = set()
        self._fx.set_timer("heartbeat", self.options.heartbeat_interval_ms)

    def validate_leadership(self, proof: Optional[ProofOfLeadership], term: int, leader: NodeId) -> bool:
        if (term, leader) in self.verified_leaders:
            return True
        if proof is None or proof.term != term or proof.candidate != leader:
            return False
        if len(proof.voters.bits) != self.config.n or proof.voters.popcount < self.config.q_elec:
            return False
        if self.config.tee[leader]:
            kp = self.keys.enclave[leader]
            ok = proof.enclave_signature is not None and crypto.verify(
                kp.pk, proof.signed_body(), proof.enclave_signature, self.keys.group
            )
        else:
            seen = set()
            for v in proof.votes:
                if v.term != term or v.candidate != leader or v.voter in seen:
                    return False
                if not self.verify(v, v.voter):
                    return False
                seen.add(v.voter)
            ok = len(seen) >= self.config.q_elec and set(proof.voters.members) == seen
        if ok:
            self.verified_leaders.add((term, leader))
        return ok

    # -- heartbeats --------------------------------------------------------------------
    def _heartbeat_tick(self, now: float) -> None:
        interval = self.options.heartbeat_interval_ms
        idle = [p for p, t in self.last_sent.items() if now - t >= interval - 1e-9]
        if idle:
            self._send_heartbeats(now, idle)
        self._fx.set_timer("heartbeat", interval)

    def _send_heartbeats(self, now: float, to) -> None:
        hb = HeartBeat(
            term=self.term,
            leader=self.id,
            last_commit_index=self.log.last_commit_index,
            proof=self.leadership_proof,
        )
        self.broadcast(hb, to)
        for p in to:
            self.last_sent[p] = now

    def _leader_broadcast(self, msg: Message, now: float, to=None) -> None:
        to = self.config.others(self.id) if to is None else to
        self.broadcast(msg, to)
        for p in to:
            self.last_sent[p] = now

    def _accept_leader(self, src: NodeId, term: int, proof, now: float) -> bool:
        """Decide whether ``src`` is the legitimate leader of ``term``."""
        if term < self.term:
            return False
        if term == self.term and self.leader_id == src:
            return True
        if term == self.term and self.leader_id is not None and self.leader_id != src:
            self._evidence(src, f"claims term {term} held by {self.leader_id}")
            return False
        if not self.validate_leadership(proof, term, src):
            return False
        if term > self.term or self.role != FOLLOWER:
            if self.role != FOLLOWER:
                self.term = max(self.term, term)
                self._step_down()
            self.term = term
        self.leader_id = src
        return True

    def _on_heartbeat(self, src: NodeId, hb: HeartBeat, now: float) -> None:
        if hb.leader != src or src == self.id:
            return
        if not self._accept_leader(src, hb.term, hb.proof, now):
            return
        self._leader_contact()
        if hb.last_commit_index > self.log.last_commit_index:
            self._fetch(self.log.last_commit_index + 1, now)

    # -- client requests & batching ----------------------------------------------------
    def _on_client_request(self, request: Request, now: float) -> None:
        if self.role != LEADER:
            self._fx.replies.append(NotLeader(request.request_id, self.leader_id))
            return
        rid = request.request_id
        if rid in self.request_index or rid in self.pending_ids:
            return
        size = len(request.payload)
        cap = self.options.batch_max_bytes
        if self.pending and self.pending_bytes + size > cap:
            self._flush(now)
        self.pending.append(request)
        self.pending_ids.add(rid)
        self.pending_bytes += size
        if self.pending_bytes >= cap:
            self._flush(now)
        elif not self.batch_armed:
            self.batch_armed = True
            self._fx.set_timer("batch", self.options.batch_timeout_ms)

    def _flush(self, now: float) -> None:
        if not self.pending:
            return
        # CoSi rounds are serialized: keep batching while one is in flight
        if self.uses_cosi and self.cosi_round is not None and self.pending_bytes < self.options.batch_max_bytes:
            return
        self._propose(self._take_batch(), now)

    def _take_batch(self) -> LogEntry:
        entry = LogEntry(term=self.term, index=self.log.last_index + 1, requests=tuple(self.pending))
        self.pending, self.pending_ids, self.pending_bytes = [], set(), 0
        return entry

    def _propose(self, entry: LogEntry, now: float) -> None:
        d = self._append(entry)
        if self.uses_cosi:
            if self.cosi_round is None:
                self._start_cosi_round(now)
            return
        # the leader's own copy counts as its acknowledgement
        self._fx.note("ack", self.term, entry.index, d, "self")
        self._leader_broadcast(
            Append(term=self.term, leader=self.id, entry=entry, digest=d,
                   leader_commit=self.log.last_commit_index),
            now,
        )
        self._try_commit(now)

    # -- TEE-leader replication ------------------------------------------------------------
    def _on_append(self, src: NodeId, m: Append, now: float) -> None:
        if m.leader != src or m.term < self.term:
            return
        if not (m.term == self.term and self.leader_id == src) or self.role == LEADER:
            return
        self._leader_contact()
        e = m.entry
        idx = e.index
        log = self.log
        if idx < 1 or e.term > m.term:
            self._evidence(src, "malformed entry")
            return
        if idx <= log.last_commit_index:
            if log.digest(idx) != m.digest:
                self._evidence(src, f"append conflicts with committed index {idx}")
            return
        if idx > log.last_index + 1:
            self._fetch(log.last_index + 1, now)
            return
        if idx <= log.last_index and log.digest(idx) == m.digest:
            self.send(src, Ack(term=self.term, index=idx, digest=m.digest, signer=self.id))
            return
        if log.next_digest(e) != m.digest:
            self._fetch(log.last_commit_index + 1, now)
            return
        if idx <= log.last_index:
            self._truncate(idx)
        self._append(e)
        self.send(src, Ack(term=self.term, index=idx, digest=m.digest, signer=self.id))
        self._check_pending_proof(now)

    def _on_ack(self, src: NodeId, a: Ack, now: float) -> None:
        if self.role != LEADER or self.uses_cosi or a.signer != src or a.term != self.term:
            return
        if a.index > self.log.last_index or a.index < 1:
            return
        if self.log.digest(a.index) != a.digest:
            self._evidence(src, f"ack digest mismatch at {a.index}")
            return
        if a.index > self.match_index.get(src, 0):
            self.match_index[src] = a.index
            self._try_commit(now)

    def _try_commit(self, now: float) -> None:
        marks = sorted([self.log.last_index] + list(self.match_index.values()), reverse=True)
        m = marks[self.config.q_rep - 1]
        if m <= self.log.last_commit_index or self.log.entry(m).term != self.term:
            return
        ackers = [self.id] + [p for p, i in self.match_index.items() if i >= m]
        bitmap = crypto.ParticipationBitmap.from_members(self.config.n, ackers)
        cert = CommitCertificate(self.term, m, self.log.digest(m), bitmap, self.id)
        kp = self.keys.enclave[self.id]
        esig = crypto.sign(kp.sk, cert.signed_body(), "cert", self.keys.group)
        cert = CommitCertificate(self.term, m, cert.entry_digest, bitmap, self.id, esig)
        self._fx.note("certified", self.term, m, cert.entry_digest, f"cert:{bitmap}:leader={self.id}")
        self._commit(m, cert)
        self._leader_broadcast(Cert(cert=cert), now)

    # -- commit proofs --------------------------------------------------------------------
    def validate_commit_proof(self, proof: Any) -> bool:
        cfg = self.config
        if isinstance(proof, CommitCertificate):
            if not 0 <= proof.leader < cfg.n or not cfg.tee[proof.leader]:
                return False
            if len(proof.ack_bitmap.bits) != cfg.n or proof.ack_bitmap.popcount < cfg.q_rep:
                return False
            sig = proof.leader_enclave_signature
            kp = self.keys.enclave[proof.leader]
            return sig is not None and crypto.verify(kp.pk, proof.signed_body(), sig, self.keys.group)
        if isinstance(proof, CoSigProof):
            bm = proof.cosig.bitmap
            if len(bm.bits) != cfg.n or not 0 <= proof.leader < cfg.n:
                return False
            if sum(1 for i in bm.members if i != proof.leader) < cfg.q_rep:
                return False
            stmt = cosi_statement(proof.term, proof.index, proof.digest, proof.leader)
            return crypto.verify_collective(self.keys.identity_pks, stmt, proof.cosig, self.keys.group)
        return False

    @staticmethod
    def _proof_digest(proof: Any) -> bytes:
        return proof.entry_digest if isinstance(proof, CommitCertificate) else proof.digest

    def _apply_proof(self, src: NodeId, proof: Any, now: float) -> None:
        if not self.validate_commit_proof(proof):
            self._evidence(src, f"invalid commit proof for index {getattr(proof, 'index', '?')}")
            return
        idx, d = proof.index, self._proof_digest(proof)
        log = self.log
        if idx <= log.last_commit_index:
            return
        if idx <= log.last_index and log.digest(idx) == d:
            kind = "cert" if isinstance(proof, CommitCertificate) else "cosig"
            bm = proof.ack_bitmap if kind == "cert" else proof.cosig.bitmap
            self._fx.note("certified", proof.term, idx, d, f"{kind}:{bm}:leader={proof.leader}")
            self._commit(idx, proof)
            return
        self.pending_proof = proof
        if idx > log.last_index:
            self._fetch(log.last_index + 1, now)
        else:
            self._fetch(log.last_commit_index + 1, now)

    def _check_pending_proof(self, now: float) -> None:
        p = self.pending_proof
        if p is None:
            return
        if p.index <= self.log.last_commit_index:
            self.pending_proof = None
        elif p.index <= self.log.last_index and self.log.digest(p.index) == self._proof_digest(p):
            self.pending_proof = None
            self._apply_proof(self.id, p, now)

    def _on_cert(self, src: NodeId, m: Cert, now: float) -> None:
        if self.role == LEADER and m.cert.term == self.term:
            return
        if src == self.leader_id and m.cert.term == self.term:
            self._leader_contact()
        self._apply_proof(src, m.cert, now)

    def _on_cosig(self, src: NodeId, m: CoSig, now: float) -> None:
        if self.role == LEADER and m.proof.term == self.term:
            return
        if src == self.leader_id and m.proof.term == self.term:
            self._leader_contact()
        self._apply_proof(src, m.proof, now)

    # -- catch-up -------------------------------------------------------------------------
    def _on_fetch(self, src: NodeId, m: FetchEntries, now: float) -> None:
        if self.role != LEADER or src == self.id:
            return
        start = max(1, m.from_index)
        stop = min(self.log.last_index, start + self.options.fetch_max_entries - 1)
        entries = tuple(self.log.entries[start - 1 : stop])
        proof = None
        bound = min(stop, self.log.last_commit_index)
        pos = bisect.bisect_right(self.proof_indices, bound)
        if pos:
            proof = self.proofs[self.proof_indices[pos - 1]]
        prev = self.log.digest(start - 1) if start - 1 <= self.log.last_index else b""
        self.send(src, EntriesResponse(term=self.term, leader=self.id, from_index=start,
                                       prev_digest=prev, entries=entries, proof=proof))
        self.last_sent[src] = now

    def _on_entries(self, src: NodeId, r: EntriesResponse, now: float) -> None:
        if r.leader != src or r.term != self.term or self.leader_id != src or self.role == LEADER:
            return
        self._leader_contact()
        prev_digest, proof = r.prev_digest, r.proof
        log = self.log
        start = r.from_index
        if start - 1 > log.last_index:
            self._fetch(log.last_index + 1, now)
            return
        if log.digest(start - 1) != prev_digest:
            if start - 1 <= log.last_commit_index:
                self._evidence(src, "entries conflict with committed prefix")
            else:
                self._fetch(log.last_commit_index + 1, now)
            return
        prev = prev_digest
        for k, e in enumerate(r.entries):
            if e.index != start + k:
                self._evidence(src, "non-contiguous entries")
                return
            d = chain_digest(prev, e.term, e.index, e.payload_digest)
            if e.index <= log.last_index:
                if log.digest(e.index) != d:
                    if e.index <= log.last_commit_index:
                        self._evidence(src, f"entries conflict with committed index {e.index}")
                        return
                    self._truncate(e.index)
                    self._append(e)
            else:
                self._append(e)
            prev = d
        if proof is not None:
            self._apply_proof(src, proof, now)
        self._check_pending_proof(now)
        # CoSi leaders learn replication from co-signatures, not acks
        if r.entries and self.config.tee[src]:
            last = r.entries[-1].index
            self.send(src, Ack(term=self.term, index=last, digest=log.digest(last), signer=self.id))

    # -- CoSi fallback: leader side --------------------------------------------------------
    def _start_cosi_round(self, now: float) -> None:
        idx = self.log.last_commit_index + 1
        if idx > self.log.last_index:
            if not self.pending:
                self.cosi_round = None
                return
            self._append(self._take_batch())
        others = [p for p in self.config.others(self.id) if p not in self.cosi_excluded]
        if len(others) < self.config.q_rep:
            self.cosi_excluded = set()
            others = self.config.others(self.id)
        self.cosi_counter += 1
        d = self.log.digest(idx)
        entry = self.log.entry(idx)
        sk = self.keys.identity[self.id].sk
        v, V = crypto.cosi_commit(sk, (self.term, self.cosi_counter, idx, d), self.keys.group)
        rnd = CoSiRound(self.cosi_counter, idx, d, entry, set(others), v)
        rnd.commitments[self.id] = V
        self.cosi_round = rnd
        self._fx.note("cosign", self.term, idx, d, "self")
        self._leader_broadcast(
            CoSiAnnounce(term=self.term, leader=self.id, round=rnd.number, entry=entry, digest=d),
            now,
            sorted(others),
        )
        self._fx.set_timer("cosi", self.options.cosi_phase_timeout_ms)

    def _round_matches(self, m, phase: str) -> Optional[CoSiRound]:
        rnd = self.cosi_round
        if (
            self.role != LEADER
            or rnd is None
            or rnd.phase != phase
            or m.term != self.term
            or m.round != rnd.number
            or m.index != rnd.index
            or m.digest != rnd.digest
        ):
            return None
        return rnd

    def _on_cosi_commit(self, src: NodeId, m: CoSiCommitMsg, now: float) -> None:
        rnd = self._round_matches(m, "commit")
        if rnd is None or m.signer != src or src not in rnd.participants:
            return
        rnd.commitments.setdefault(src, m.commitment)
        if len(rnd.commitments) == len(rnd.participants) + 1:
            self._cosi_challenge(now)

    def _cosi_challenge(self, now: float) -> None:
        rnd = self.cosi_round
        members = tuple(sorted(rnd.commitments))
        if sum(1 for p in members if p != self.id) < self.config.q_rep:
            return
        rnd.members = members
        rnd.aggregate = crypto.cosi_aggregate_commitments(
            [rnd.commitments[p] for p in members], self.keys.group
        )
        stmt = cosi_statement(self.term, rnd.index, rnd.digest, self.id)
        rnd.challenge = crypto.cosi_challenge(rnd.aggregate, stmt, self.keys.group)
        rnd.responses[self.id] = crypto.cosi_respond(
            rnd.secret, rnd.challenge, self.keys.identity[self.id].sk, self.keys.group
        )
        rnd.phase = "response"
        bitmap = crypto.ParticipationBitmap.from_members(self.config.n, members)
        self._leader_broadcast(
            CoSiChallengeMsg(term=self.term, round=rnd.number, index=rnd.index, digest=rnd.digest,
                             aggregate_commitment=rnd.aggregate, challenge=rnd.challenge,
                             bitmap=bitmap),
            now,
            [p for p in members if p != self.id],
        )
        self._fx.set_timer("cosi", self.options.cosi_phase_timeout_ms)

    def _on_cosi_response(self, src: NodeId, m: CoSiResponseMsg, now: float) -> None:
        rnd = self._round_matches(m, "response")
        if rnd is None or m.signer != src or src not in rnd.members or src in rnd.responses:
            return
        pk = self.keys.identity[src].pk
        if not crypto.cosi_verify_partial(pk, rnd.commitments[src], m.response, rnd.challenge,
                                          self.keys.group):
            rnd.bad.add(src)
            self._evidence(src, f"invalid co-signature share at {rnd.index}")
        else:
            rnd.responses[src] = m.response
        if len(rnd.responses) + len(rnd.bad) == len(rnd.members):
            if rnd.bad:
                self.cosi_excluded |= rnd.bad
                self._start_cosi_round(now)
            else:
                self._cosi_finalize(now)

    def _cosi_finalize(self, now: float) -> None:
        rnd = self.cosi_round
        agg = crypto.cosi_aggregate_responses([rnd.responses[p] for p in rnd.members], self.keys.group)
        bitmap = crypto.ParticipationBitmap.from_members(self.config.n, rnd.members)
        cosig = crypto.CollectiveSignature(bitmap, rnd.aggregate, agg)
        proof = CoSigProof(self.term, rnd.index, rnd.digest, self.id, cosig)
        self.cosi_round = None
        self.cosi_excluded = set()
        self._fx.cancel_timer("cosi")
        if not self.validate_commit_proof(proof):
            self._start_cosi_round(now)
            return
        self._fx.note("certified", self.term, rnd.index, rnd.digest, f"cosig:{bitmap}:leader={self.id}")
        self._commit(rnd.index, proof)
        self._leader_broadcast(CoSig(proof=proof), now)
        self._start_cosi_round(now)

    def _cosi_timeout(self, now: float) -> None:
        rnd = self.cosi_round
        if rnd is None:
            self._start_cosi_round(now)
            return
        if rnd.phase == "commit":
            followers = len(rnd.commitments) - 1
            if followers >= self.config.q_rep:
                self._cosi_challenge(now)
                return
            self.cosi_excluded = set()
        else:
            self.cosi_excluded |= set(rnd.members) - set(rnd.responses) - {self.id}
            self.cosi_excluded |= rnd.bad
        # round abandoned; the entry stays uncommitted and is retried
        self._start_cosi_round(now)

    # -- CoSi fallback: follower side ------------------------------------------------------
    def _on_cosi_announce(self, src: NodeId, a: CoSiAnnounce, now: float) -> None:
        if a.leader != src or a.term != self.term or self.leader_id != src or self.role == LEADER:
            return
        self._leader_contact()
        e, log = a.entry, self.log
        idx = e.index
        if idx <= log.last_commit_index:
            return
        if idx > log.last_commit_index + 1:
            self._fetch(log.last_commit_index + 1, now)
            return
        if e.term > a.term or chain_digest(log.digest(idx - 1), e.term, idx, e.payload_digest) != a.digest:
            self._evidence(src, f"announce does not extend committed prefix at {idx}")
            return
        seen = self.cosi_accepted.get((a.term, idx))
        if seen is not None and seen != a.digest:
            self._evidence(src, f"equivocation at term {a.term} index {idx}")
            return
        self.cosi_accepted[(a.term, idx)] = a.digest
        if idx <= log.last_index:
            if log.digest(idx) != a.digest:
                self._truncate(idx)
                self._append(e)
        else:
            self._append(e)
        sk = self.keys.identity[self.id].sk
        v, V = crypto.cosi_commit(sk, (a.term, a.round, idx, a.digest), self.keys.group)
        self.cosi_secrets[(a.term, a.round)] = (v, idx, a.digest)
        self.send(src, CoSiCommitMsg(term=a.term, round=a.round, index=idx, digest=a.digest,
                                     commitment=V, signer=self.id))
        self._check_pending_proof(now)

    def _on_cosi_challenge(self, src: NodeId, m: CoSiChallengeMsg, now: float) -> None:
        if m.term != self.term or self.leader_id != src or self.role == LEADER:
            return
        self._leader_contact()
        # each secret answers at most one challenge
        secret = self.cosi_secrets.pop((m.term, m.round), None)
        if secret is None:
            return
        v, idx, d = secret
        if m.index != idx or m.digest != d or self.id not in m.bitmap:
            return
        stmt = cosi_statement(m.term, idx, d, src)
        c = crypto.cosi_challenge(m.aggregate_commitment, stmt, self.keys.group)
        if c != m.challenge:
            self._evidence(src, f"challenge does not match statement at {idx}")
            return
        r = crypto.cosi_respond(v, c, self.keys.identity[self.id].sk, self.keys.group)
        self._fx.note("cosign", m.term, idx, d, "share")
        self.send(src, CoSiResponseMsg(term=m.term, round=m.round, index=idx, digest=d,
                                       response=r, signer=self.id))

    _handlers = {
        Append: _on_append,
        Ack: _on_ack,
        Cert: _on_cert,
        HeartBeat: _on_heartbeat,
        RequestVote: _on_request_vote,
        PreVote: _on_prevote,
        PreVoteGrant: _on_prevote_grant,
        Vote: _on_vote,
        FetchEntries: _on_fetch,
        EntriesResponse: _on_entries,
        CoSiAnnounce: _on_cosi_announce,
        CoSiCommitMsg: _on_cosi_commit,
        CoSiChallengeMsg: _on_cosi_challenge,
        CoSiResponseMsg: _on_cosi_response,
        CoSig: _on_cosig,
    }
