"""Shared domain types and quorum arithmetic.

A cluster of ``n = 3f + 2`` nodes tolerates ``f`` mixed faults. Replication
needs ``2f + 1`` acknowledgements; leader election needs ``2f + 2`` votes.
"""

from __future__ import annotations

import hashlib
import struct
from functools import cached_property
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

NodeId = int
Term = int

GENESIS_DIGEST = b"\x00" * 32


class ConfigError(ValueError):
    """Raised for cluster configurations the protocol cannot run with."""


@dataclass(frozen=True)
class QuorumParams:
    n: int
    f: int
    q_rep: int
    q_elec: int


def derive_params(n: int) -> QuorumParams:
    if n < 2 or (n - 2) % 3 != 0:
        raise ConfigError(f"n={n}: n-2 not divisible by 3 (need n = 3f + 2)")
    f = (n - 2) // 3
    return QuorumParams(n=n, f=f, q_rep=2 * f + 1, q_elec=2 * f + 2)


def election_quorum_intersection(n: int, q_elec: int) -> int:
    """Smallest possible overlap of two election quorums of size ``q_elec``."""
    if q_elec > n:
        raise ConfigError(f"quorum {q_elec} larger than cluster size {n}")
    return max(0, 2 * q_elec - n)


def is_more_up_to_date(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    """True iff log position ``a`` is at least as up-to-date as ``b``.

    Positions are ``(last_term, last_index)`` compared lexicographically.
    """
    return a[0] > b[0] or (a[0] == b[0] and a[1] >= b[1])


def is_more_up_to_date_index_only(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    # Unsafe variant kept for ablation runs; ignores terms entirely.
    return a[1] >= b[1]


@dataclass(frozen=True)
class ClusterConfig:
    n: int
    f: int
    q_rep: int
    q_elec: int
    tee: Tuple[bool, ...]

    @classmethod
    def build(
        cls,
        n: int,
        tee: Sequence[bool],
        q_elec: Optional[int] = None,
        require_tee_quorum: bool = True,
    ) -> "ClusterConfig":
        params = derive_params(n)
        tee = tuple(bool(t) for t in tee)
        if len(tee) != n:
            raise ConfigError(f"tee flags: expected {n} entries, got {len(tee)}")
        if require_tee_quorum and sum(tee) < params.f + 1:
            raise ConfigError(
                f"tee flags: need at least f+1={params.f + 1} TEE nodes, got {sum(tee)}"
            )
        q = params.q_elec if q_elec is None else q_elec
        if not 1 <= q <= n:
            raise ConfigError(f"election quorum {q} outside 1..{n}")
        return cls(n=n, f=params.f, q_rep=params.q_rep, q_elec=q, tee=tee)

    @property
    def n_tee(self) -> int:
        return sum(self.tee)

    @property
    def nodes(self) -> range:
        return range(self.n)

    def others(self, node: NodeId) -> list:
        return [i for i in range(self.n) if i != node]


def request_digest(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class Request:
    request_id: int
    payload: bytes

    @property
    def size(self) -> int:
        return len(self.payload)


def batch_digest(requests: Iterable[Request]) -> bytes:
    h = hashlib.sha256()
    for r in requests:
        h.update(struct.pack(">QI", r.request_id, len(r.payload)))
        h.update(r.payload)
    return h.digest()


def chain_digest(prev: bytes, term: int, index: int, payload_digest: bytes) -> bytes:
    """Digest of an entry bound to its whole prefix.

    Hashes ``prev || term || index || payload_digest`` with term and index
    as fixed-width (8-byte) big-endian integers.
    """
    h = hashlib.sha256()
    h.update(prev)
    h.update(struct.pack(">QQ", term, index))
    h.update(payload_digest)
    return h.digest()


@dataclass(frozen=True)
class LogEntry:
    """One replicated slot: a batch of client requests proposed in ``term``."""

    term: Term
    index: int
    requests: Tuple[Request, ...] = ()

    @cached_property
    def payload_digest(self) -> bytes:
        return batch_digest(self.requests)

    @property
    def size(self) -> int:
        return sum(r.size for r in self.requests)

    @property
    def request_ids(self) -> Tuple[int, ...]:
        return tuple(r.request_id for r in self.requests)


@dataclass
class ReplicatedLog:
    """Log with 1-based indices and hash-chained digests.

    ``digest(i)`` covers entries ``1..i``, so matching digests at ``i``
    imply identical prefixes.
    """

    entries: list = field(default_factory=list)
    digests: list = field(default_factory=list)
    last_commit_index: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def last_index(self) -> int:
        return len(self.entries)

    @property
    def last_term(self) -> int:
        return self.entries[-1].term if self.entries else 0

    @property
    def position(self) -> Tuple[int, int]:
        return (self.last_term, self.last_index)

    def entry(self, index: int) -> Optional[LogEntry]:
        if 1 <= index <= len(self.entries):
            return self.entries[index - 1]
        return None

    def digest(self, index: int) -> bytes:
        if index == 0:
            return GENESIS_DIGEST
        if 1 <= index <= len(self.digests):
            return self.digests[index - 1]
        raise IndexError(index)

    def next_digest(self, entry: LogEntry) -> bytes:
        """Digest ``entry`` would get if appended after index ``entry.index - 1``."""
        return chain_digest(
            self.digest(entry.index - 1), entry.term, entry.index, entry.payload_digest
        )

    def append(self, entry: LogEntry) -> bytes:
        if entry.index != len(self.entries) + 1:
            raise ValueError(f"non-contiguous append at {entry.index}")
        if self.entries and entry.term < self.entries[-1].term:
            raise ValueError("terms must be non-decreasing along the log")
        d = self.next_digest(entry)
        self.entries.append(entry)
        self.digests.append(d)
        return d

    def truncate_from(self, index: int) -> None:
        if index <= self.last_commit_index:
            raise ValueError(f"refusing to truncate committed index {index}")
        del self.entries[index - 1 :]
        del self.digests[index - 1 :]

    def commit_to(self, index: int) -> list:
        """Advance the commit point; returns newly committed entries."""
        index = min(index, len(self.entries))
        if index <= self.last_commit_index:
            return []
        newly = self.entries[self.last_commit_index : index]
        self.last_commit_index = index
        return newly
