"""The closed set of MRaft protocol messages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, ClassVar, Optional, Tuple

from .. import crypto
from ..core import LogEntry, NodeId
from ..protocol import CATCHUP, ELECTION, HEARTBEAT, REPLICATION, Message, canonical


def _hex(d: bytes) -> str:
    return d.hex() if d else ""


@dataclass(frozen=True)
class Append(Message):
    term: int
    leader: NodeId
    entry: LogEntry
    digest: bytes
    leader_commit: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.entry.index, _hex(self.digest))


@dataclass(frozen=True)
class Ack(Message):
    term: int
    index: int
    digest: bytes
    signer: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, _hex(self.digest))


@dataclass(frozen=True)
class CommitCertificate:
    """Enclave-signed statement that ``ack_bitmap`` acknowledged ``digest``."""

    term: int
    index: int
    entry_digest: bytes
    ack_bitmap: crypto.ParticipationBitmap
    leader: NodeId
    leader_enclave_signature: Any = None

    def signed_body(self) -> bytes:
        return crypto.encode_fields(
            "cert", self.term, self.index, self.entry_digest, self.ack_bitmap.encode(), self.leader
        )


@dataclass(frozen=True)
class Cert(Message):
    cert: CommitCertificate
    sig: Any = None

    def trace_fields(self):
        c = self.cert
        return (c.term, c.index, _hex(c.entry_digest))


@dataclass(frozen=True)
class CoSigProof:
    """Collective signature over ``cosi_statement(term, index, digest, leader)``."""

    term: int
    index: int
    digest: bytes
    leader: NodeId
    cosig: crypto.CollectiveSignature


def cosi_statement(term: int, index: int, digest: bytes, leader: NodeId) -> bytes:
    return crypto.encode_fields("cosi", term, index, digest, leader)


@dataclass(frozen=True)
class Vote(Message):
    category: ClassVar[str] = ELECTION
    term: int
    voter: NodeId
    candidate: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, 0, "")


@dataclass(frozen=True)
class ProofOfLeadership:
    """Either an enclave-signed vote tally (TEE winner) or the raw votes."""

    term: int
    candidate: NodeId
    voters: crypto.ParticipationBitmap
    votes: Tuple[Vote, ...] = ()
    enclave_signature: Any = None

    def signed_body(self) -> bytes:
        return crypto.encode_fields("leadership", self.term, self.candidate, self.voters.encode())


@dataclass(frozen=True)
class HeartBeat(Message):
    category: ClassVar[str] = HEARTBEAT
    term: int
    leader: NodeId
    last_commit_index: int
    proof: Optional[ProofOfLeadership] = None
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.last_commit_index, "")


@dataclass(frozen=True)
class RequestVote(Message):
    category: ClassVar[str] = ELECTION
    candidate: NodeId
    new_term: int
    last_log_term: int
    last_log_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.new_term, self.last_log_index, "")


@dataclass(frozen=True)
class PreVote(Message):
    """Asks whether the sender could win an election at ``next_term``.

    Nobody changes state on a PreVote; a node increments its term only once
    ``q_elec`` nodes have answered, so an isolated or lagging node cannot
    inflate its term and strand itself.
    """

    category: ClassVar[str] = ELECTION
    candidate: NodeId
    next_term: int
    last_log_term: int
    last_log_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.next_term, self.last_log_index, "")


@dataclass(frozen=True)
class PreVoteGrant(Message):
    category: ClassVar[str] = ELECTION
    term: int
    voter: NodeId
    candidate: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, 0, "")


@dataclass(frozen=True)
class CoSiAnnounce(Message):
    term: int
    leader: NodeId
    round: int
    entry: LogEntry
    digest: bytes
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.entry.index, _hex(self.digest))


@dataclass(frozen=True)
class CoSiCommitMsg(Message):
    term: int
    round: int
    index: int
    digest: bytes
    commitment: int
    signer: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, _hex(self.digest))


@dataclass(frozen=True)
class CoSiChallengeMsg(Message):
    term: int
    round: int
    index: int
    digest: bytes
    aggregate_commitment: int
    challenge: int
    bitmap: crypto.ParticipationBitmap
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, _hex(self.digest))


@dataclass(frozen=True)
class CoSiResponseMsg(Message):
    term: int
    round: int
    index: int
    digest: bytes
    response: int
    signer: NodeId
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.index, _hex(self.digest))


@dataclass(frozen=True)
class CoSig(Message):
    proof: CoSigProof
    sig: Any = None

    def trace_fields(self):
        p = self.proof
        return (p.term, p.index, _hex(p.digest))


@dataclass(frozen=True)
class FetchEntries(Message):
    category: ClassVar[str] = CATCHUP
    term: int
    from_index: int
    sig: Any = None

    def trace_fields(self):
        return (self.term, self.from_index, "")


@dataclass(frozen=True)
class EntriesResponse(Message):
    """Entries ``from_index..`` of the responder's log plus a commit proof.

    ``proof`` is a :class:`CommitCertificate` or :class:`CoSigProof` for the
    highest committed index covered by ``entries``, if any.
    """

    category: ClassVar[str] = CATCHUP
    term: int
    leader: NodeId
    from_index: int
    prev_digest: bytes
    entries: Tuple[LogEntry, ...]
    proof: Any = None
    sig: Any = None

    def trace_fields(self):
        last = self.entries[-1].index if self.entries else self.from_index
        return (self.term, last, "")


# Replication messages that make up one committed batch.
TEE_ROUND = (Append, Ack, Cert)
COSI_ROUND = (CoSiAnnounce, CoSiCommitMsg, CoSiChallengeMsg, CoSiResponseMsg, CoSig)

__all__ = [
    "Ack", "Append", "Cert", "CoSiAnnounce", "CoSiChallengeMsg", "CoSiCommitMsg",
    "CoSiResponseMsg", "CoSig", "CoSigProof", "CommitCertificate", "EntriesResponse",
    "FetchEntries", "HeartBeat", "PreVote", "PreVoteGrant", "ProofOfLeadership", "RequestVote",
    "Vote",
    "cosi_statement", "canonical",
]
