"""Normal-case PBFT used as a comparison baseline.

``n = 3f + 1`` with quorums of ``2f + 1``. Node 0 is the primary of view 0.
View changes and checkpoints are omitted. Each batch costs a PrePrepare to
every backup; then every replica broadcasts a Prepare and a Commit:
``(n-1) + 2n(n-1)`` messages in total.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Set

from ..core import ClusterConfig, LogEntry, NodeId, ReplicatedLog, Request
from ..protocol import KeyRing, Message, NotLeader, Replica


def pbft_cluster(f: int) -> ClusterConfig:
    n = 3 * f + 1
    return ClusterConfig(n=n, f=f, q_rep=2 * f + 1, q_elec=2 * f + 1, tee=(False,) * n)


@dataclass(frozen=True)
class PrePrepare(Message):
    view: int
    seq: int
    entry: LogEntry
    digest: bytes
    sig: Any = None

    def trace_fields(self):
        return (self.view, self.seq, self.digest.hex())


@dataclass(frozen=True)
class Prepare(Message):
    view: int
    seq: int
    digest: bytes
    replica: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.view, self.seq, self.digest.hex())


@dataclass(frozen=True)
class CommitVote(Message):
    view: int
    seq: int
    digest: bytes
    replica: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.view, self.seq, self.digest.hex())


@dataclass
class Slot:
    entry: Optional[LogEntry] = None
    digest: bytes = b""
    prepares: Set[NodeId] = field(default_factory=set)
    commits: Set[NodeId] = field(default_factory=set)
    prepared: bool = False
    committed: bool = False


@dataclass
class PBFTOptions:
    batch_max_bytes: int = 20480
    batch_timeout_ms: float = 1.0


class PBFTReplica(Replica):
    protocol = "pbft"

    def __init__(self, node_id: NodeId, config: ClusterConfig, keys: Optional[KeyRing] = None,
                 options: Optional[PBFTOptions] = None, initial_leader: Optional[NodeId] = 0):
        super().__init__(node_id, config, keys)
        self.options = options or PBFTOptions()
        self.view = 0
        self.primary = 0 if initial_leader is None else initial_leader
        self.log = ReplicatedLog()
        self.slots: Dict[int, Slot] = {}
        self.next_seq = 1
        self.seen_requests: Set[int] = set()
        self.pending: list = []
        self.pending_bytes = 0
        self.batch_armed = False

    # message authentication is not modelled for the baseline
    def sign(self, msg: Message) -> Message:
        return msg

    @property
    def quorum(self) -> int:
        return self.config.q_rep

    @property
    def is_leader(self) -> bool:
        return self.id == self.primary

    @property
    def current_term(self) -> int:
        return self.view

    def _on_start(self, now: float) -> None:
        if self.is_leader:
            self._fx.note("role", self.view, 0, b"", "leader")

    def _slot(self, seq: int) -> Slot:
        return self.slots.setdefault(seq, Slot())

    # -- primary --------------------------------------------------------------------------
    def _on_client_request(self, request: Request, now: float) -> None:
        if not self.is_leader:
            self._fx.replies.append(NotLeader(request.request_id, self.primary))
            return
        if request.request_id in self.seen_requests:
            return
        self.seen_requests.add(request.request_id)
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

    def _on_timer(self, name: str, now: float) -> None:
        if name == "batch":
            self.batch_armed = False
            self._flush(now)

    def _flush(self, now: float) -> None:
        if not self.pending:
            return
        seq = self.next_seq
        self.next_seq += 1
        entry = LogEntry(self.view, seq, tuple(self.pending))
        self.pending, self.pending_bytes = [], 0
        digest = entry.payload_digest
        self.broadcast(PrePrepare(self.view, seq, entry, digest))
        self._accept(seq, entry, digest)

    # -- all replicas ----------------------------------------------------------------------
    def _accept(self, seq: int, entry: LogEntry, digest: bytes) -> None:
        slot = self._slot(seq)
        if slot.entry is not None:
            return
        slot.entry, slot.digest = entry, digest
        slot.prepares.add(self.id)
        self.broadcast(Prepare(self.view, seq, digest, self.id))
        self._progress(seq)

    def _on_message(self, src: NodeId, msg: Message, now: float) -> None:
        if isinstance(msg, PrePrepare):
            if src == self.primary and msg.view == self.view and msg.entry.payload_digest == msg.digest:
                self._accept(msg.seq, msg.entry, msg.digest)
        elif isinstance(msg, Prepare):
            if msg.replica == src and msg.view == self.view:
                slot = self._slot(msg.seq)
                if slot.entry is None or slot.digest == msg.digest:
                    slot.prepares.add(src)
                    self._progress(msg.seq)
        elif isinstance(msg, CommitVote):
            if msg.replica == src and msg.view == self.view:
                slot = self._slot(msg.seq)
                if slot.entry is None or slot.digest == msg.digest:
                    slot.commits.add(src)
                    self._progress(msg.seq)

    def _progress(self, seq: int) -> None:
        slot = self.slots[seq]
        if slot.entry is None:
            return
        if not slot.prepared and len(slot.prepares) >= self.quorum:
            slot.prepared = True
            slot.commits.add(self.id)
            self.broadcast(CommitVote(self.view, seq, slot.digest, self.id))
        if slot.prepared and not slot.committed and len(slot.commits) >= self.quorum:
            slot.committed = True
            self._execute()

    def _execute(self) -> None:
        """Commit committed-local slots in sequence order."""
        log = self.log
        while True:
            slot = self.slots.get(log.last_index + 1)
            if slot is None or not slot.committed:
                return
            d = log.append(slot.entry)
            self._fx.note("append", slot.entry.term, slot.entry.index, d, log.digest(log.last_index - 1).hex())
            for e in log.commit_to(log.last_index):
                self._fx.note("commit", e.term, e.index, log.digest(e.index))
                self._fx.commits.append(e)


__all__ = ["CommitVote", "PBFTOptions", "PBFTReplica", "Prepare", "PrePrepare", "pbft_cluster"]
