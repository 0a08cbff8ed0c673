"""Minimal crash-fault Raft used as a comparison baseline.

``n = 2f + 1`` (or any ``n``) with majority quorums. Each batch costs an AppendEntries
broadcast, one response per follower and an explicit Commit broadcast. That is
3(n-1) messages, the same pattern as the TEE-leader path of MRaft. Raft trusts
whatever the leader sends, so one Byzantine leader is enough to break
agreement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar, Dict, Optional, Set

from ..core import ClusterConfig, LogEntry, NodeId, ReplicatedLog, Request, is_more_up_to_date
from ..protocol import ELECTION, HEARTBEAT, KeyRing, Message, NotLeader, Replica

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"


def raft_cluster(f: int, n: Optional[int] = None) -> ClusterConfig:
    """Majority-quorum cluster; ``n`` defaults to ``2f + 1`` (an even ``n`` tolerates ``(n-1)//2``)."""
    n = 2 * f + 1 if n is None else n
    q = n // 2 + 1
    return ClusterConfig(n=n, f=f, q_rep=q, q_elec=q, tee=(False,) * n)


@dataclass(frozen=True)
class AppendEntries(Message):
    term: int
    leader: NodeId
    entry: LogEntry
    digest: bytes
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.entry.index, self.digest.hex())


@dataclass(frozen=True)
class AppendResponse(Message):
    term: int
    index: int
    success: bool
    match_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, "")


@dataclass(frozen=True)
class Commit(Message):
    term: int
    index: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, "")


@dataclass(frozen=True)
class HeartBeat(Message):
    category: ClassVar[str] = HEARTBEAT
    term: int
    leader: NodeId
    commit_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.commit_index, "")


@dataclass(frozen=True)
class RequestVote(Message):
    category: ClassVar[str] = ELECTION
    term: int
    candidate: NodeId
    last_log_term: int
    last_log_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.last_log_index, "")


@dataclass(frozen=True)
class Vote(Message):
    category: ClassVar[str] = ELECTION
    term: int
    voter: NodeId
    candidate: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, 0, "")


@dataclass
class RaftOptions:
    timeout_ms: tuple = (150.0, 300.0)
    heartbeat_ms: float = 50.0
    batch_max_bytes: int = 20480
    batch_timeout_ms: float = 1.0


class RaftReplica(Replica):
    protocol = "raft"

    def __init__(self, node_id: NodeId, config: ClusterConfig, keys: Optional[KeyRing] = None,
                 options: Optional[RaftOptions] = None, initial_leader: Optional[NodeId] = None):
        super().__init__(node_id, config, keys)
        self.options = options or RaftOptions()
        self.initial_leader = initial_leader
        self.role = FOLLOWER
        self.term = 0
        self.voted_for: Dict[int, NodeId] = {}
        self.leader_id: Optional[NodeId] = None
        self.log = ReplicatedLog()
        self.request_index: Dict[int, int] = {}
        self.match_index: Dict[NodeId, int] = {}
        self.votes: Set[NodeId] = set()
        self.catching_up: Set[NodeId] = set()
        self.matched = 0  # highest index known to match the current leader's log
        self.pending: list = []
        self.pending_bytes = 0
        self.batch_armed = False

    # plain Raft carries no signatures
    def sign(self, msg: Message) -> Message:
        return msg

    def verify(self, msg: Message, sender: NodeId) -> bool:
        return True

    @property
    def is_leader(self) -> bool:
        return self.role == LEADER

    @property
    def current_term(self) -> int:
        return self.term

    def _set_role(self, role: str) -> None:
        self.role = role
        self._fx.note("role", self.term, self.log.last_index, self.log.digest(self.log.last_index), role)

    def _arm(self) -> None:
        self._fx.set_timer("election", *self.options.timeout_ms)

    def _append(self, entry: LogEntry) -> bytes:
        prev = self.log.digest(entry.index - 1)
        d = self.log.append(entry)
        for rid in entry.request_ids:
            self.request_index[rid] = entry.index
        self._fx.note("append", entry.term, entry.index, d, prev.hex())
        return d

    def _commit(self, index: int) -> None:
        for e in self.log.commit_to(index):
            self._fx.note("commit", e.term, e.index, self.log.digest(e.index))
            self._fx.commits.append(e)

    def _adopt(self, term: int) -> None:
        if term > self.term:
            self.term = term
            self.leader_id = None
            self.matched = self.log.last_commit_index
            if self.role != FOLLOWER:
                if self.role == LEADER:
                    self._fx.cancel_timer("heartbeat")
                    self._fx.cancel_timer("batch")
                    self.pending, self.pending_bytes, self.batch_armed = [], 0, False
                self._set_role(FOLLOWER)
            self._arm()

    # -- lifecycle ------------------------------------------------------------------
    def _on_start(self, now: float) -> None:
        if self.initial_leader is not None:
            self.term = 1
            self.leader_id = self.initial_leader
            if self.initial_leader == self.id:
                self._lead(now)
                return
        self._arm()

    def _lead(self, now: float) -> None:
        self._set_role(LEADER)
        self.leader_id = self.id
        self.match_index = {p: 0 for p in self.config.others(self.id)}
        self.catching_up = set()
        self._fx.cancel_timer("election")
        self._fx.set_timer("heartbeat", self.options.heartbeat_ms)

    def _on_timer(self, name: str, now: float) -> None:
        if name == "election" and self.role != LEADER:
            self.term += 1
            self.voted_for[self.term] = self.id
            self.votes = {self.id}
            self.leader_id = None
            self._set_role(CANDIDATE)
            self._arm()
            self.broadcast(RequestVote(self.term, self.id, self.log.last_term, self.log.last_index))
        elif name == "heartbeat" and self.role == LEADER:
            self.broadcast(HeartBeat(self.term, self.id, self.log.last_commit_index))
            self._fx.set_timer("heartbeat", self.options.heartbeat_ms)
        elif name == "batch" and self.role == LEADER:
            self.batch_armed = False
            self._flush(now)

    # -- elections ------------------------------------------------------------------------
    def _on_request_vote(self, src: NodeId, m: RequestVote, now: float) -> None:
        self._adopt(m.term)
        if m.term < self.term or self.voted_for.get(m.term, m.candidate) != m.candidate:
            return
        if not is_more_up_to_date((m.last_log_term, m.last_log_index), self.log.position):
            return
        self.voted_for[m.term] = m.candidate
        self._arm()
        self.send(src, Vote(m.term, self.id, m.candidate))

    def _on_vote(self, src: NodeId, m: Vote, now: float) -> None:
        if self.role != CANDIDATE or m.term != self.term or m.candidate != self.id:
            return
        self.votes.add(src)
        if len(self.votes) >= self.config.q_elec:
            self.votes = set()
            self._lead(now)
            self._replicate(LogEntry(self.term, self.log.last_index + 1), now)

    def _follow(self, src: NodeId, term: int) -> None:
        if term > self.term:
            self._adopt(term)
        if self.leader_id != src:
            self.matched = self.log.last_commit_index
        if self.role == CANDIDATE:
            self._set_role(FOLLOWER)
        self.leader_id = src
        self._arm()

    def _on_heartbeat(self, src: NodeId, m: HeartBeat, now: float) -> None:
        if m.term < self.term:
            return
        self._follow(src, m.term)
        if m.commit_index > self.matched:
            self.send(src, AppendResponse(self.term, self.matched, False, self.matched))
        else:
            self._commit(m.commit_index)

    # -- replication -----------------------------------------------------------------------
    def _on_client_request(self, request: Request, now: float) -> None:
        if self.role != LEADER:
            self._fx.replies.append(NotLeader(request.request_id, self.leader_id))
            return
        if request.request_id in self.request_index or any(
            r.request_id == request.request_id for r in self.pending
        ):
            return
        size = len(request.payload)
        if self.pending and self.pending_bytes + size > self.options.batch_max_bytes:
            self._flush(now)
        self.pending.append(request)
        self.pending_bytes += size
        if self.pending_bytes >= self.options.batch_max_bytes:
            self._flush(now)
        elif not self.batch_armed:
            self.batch_armed = True
            self._fx.set_timer("batch", self.options.batch_timeout_ms)

    def _flush(self, now: float) -> None:
        if not self.pending:
            return
        entry = LogEntry(self.term, self.log.last_index + 1, tuple(self.pending))
        self.pending, self.pending_bytes = [], 0
        self._replicate(entry, now)

    def _replicate(self, entry: LogEntry, now: float) -> None:
        d = self._append(entry)
        self.broadcast(AppendEntries(self.term, self.id, entry, d))
        self._advance(now)

    def _on_append(self, src: NodeId, m: AppendEntries, now: float) -> None:
        if m.term < self.term:
            return
        self._follow(src, m.term)
        e, log = m.entry, self.log
        if e.index > log.last_index + 1:
            self.send(src, AppendResponse(self.term, e.index, False, self.matched))
            return
        # the chained digest doubles as Raft's log-matching check
        if log.next_digest(e) != m.digest:
            self.send(src, AppendResponse(self.term, e.index, False, log.last_commit_index))
            return
        if e.index <= log.last_index and log.digest(e.index) != m.digest:
            if e.index <= log.last_commit_index:
                return
            log.truncate_from(e.index)
            self._fx.note("truncate", self.term, e.index)
        if e.index > log.last_index:
            self._append(e)
        self.matched = max(self.matched, e.index)
        self.send(src, AppendResponse(self.term, e.index, True, e.index))

    def _on_append_response(self, src: NodeId, m: AppendResponse, now: float) -> None:
        if m.term > self.term:
            self._adopt(m.term)
            return
        if self.role != LEADER or m.term != self.term:
            return
        if not m.success:
            # resend the missing suffix one entry at a time
            self.catching_up.add(src)
            self._resend(src, m.match_index + 1)
            return
        if m.match_index > self.match_index.get(src, 0):
            self.match_index[src] = m.match_index
            self._advance(now)
        if src in self.catching_up:
            if m.match_index < self.log.last_index:
                self._resend(src, m.match_index + 1)
            else:
                self.catching_up.discard(src)

    def _resend(self, dst: NodeId, index: int) -> None:
        if index <= self.log.last_index:
            self.send(dst, AppendEntries(self.term, self.id, self.log.entry(index), self.log.digest(index)))

    def _advance(self, now: float) -> None:
        marks = sorted([self.log.last_index] + list(self.match_index.values()), reverse=True)
        m = marks[self.config.q_rep - 1]
        if m <= self.log.last_commit_index or self.log.entry(m).term != self.term:
            return
        self._commit(m)
        self.broadcast(Commit(self.term, m))

    def _on_commit_msg(self, src: NodeId, m: Commit, now: float) -> None:
        if m.term < self.term or src != self.leader_id:
            return
        # Raft trusts the leader: commit whatever sits at the index
        self._commit(min(m.index, self.matched))

    def _on_message(self, src: NodeId, msg: Message, now: float) -> None:
        handler = self._handlers.get(type(msg))
        if handler is not None:
            handler(self, src, msg, now)

    _handlers = {
        AppendEntries: _on_append,
        AppendResponse: _on_append_response,
        Commit: _on_commit_msg,
        HeartBeat: _on_heartbeat,
        RequestVote: _on_request_vote,
        Vote: _on_vote,
    }


__all__ = [
    "AppendEntries", "AppendResponse", "Commit", "HeartBeat", "RaftOptions", "RaftReplica",
    "RequestVote", "Vote", "raft_cluster",
]
