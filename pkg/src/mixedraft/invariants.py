"""Safety checkers over a simulation trace.

Every checker reads only the trace. That way ``verify`` can re-check a saved
run without re-simulating it. A trace may start with a ``header`` record
whose note is the run's JSON configuration: n, quorums, TEE flags, the
Byzantine nodes and the genesis leader. Byzantine nodes are excluded from
the honest-node properties.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .simnet import TRACE_FIELDS

AGREEMENT = "AGREEMENT"
DURABILITY = "DURABILITY"
ELECTION_SAFETY = "ELECTION_SAFETY"
CERT_SOUNDNESS = "CERT_SOUNDNESS"
TEE_NON_EQUIVOCATION = "TEE_NON_EQUIVOCATION"
NO_SPONTANEOUS_DELIVERY = "NO_SPONTANEOUS_DELIVERY"
CLOCK_MONOTONIC = "CLOCK_MONOTONIC"

CHECKS = (
    AGREEMENT, DURABILITY, ELECTION_SAFETY, CERT_SOUNDNESS,
    TEE_NON_EQUIVOCATION, NO_SPONTANEOUS_DELIVERY, CLOCK_MONOTONIC,
)

# messages whose (term, index) a TEE node must never bind to two digests
_TEE_BINDING = ("Append", "Cert", "CoSiAnnounce", "CoSig")


@dataclass(frozen=True)
class Violation:
    check: str
    t: float
    detail: str

    def to_json(self) -> dict:
        return asdict(self)


def record_from_json(obj: dict) -> tuple:
    return tuple(obj[k] for k in TRACE_FIELDS)


def header_record(config: dict) -> tuple:
    return (0.0, "header", -1, -1, 0, 0, "", json.dumps(config, sort_keys=True, separators=(",", ":")))


def _msg_type(note: str) -> str:
    return note.split("#", 1)[0]


def _msg_id(note: str) -> str:
    return note.split(" ", 1)[0]


class TraceChecker:
    """Single pass over the trace; violations accumulate in ``violations``."""

    def __init__(self, config: Optional[dict] = None):
        self.config = config or {}
        self.n = self.config.get("n")
        self.q_rep = self.config.get("q_rep")
        self.q_elec = self.config.get("q_elec")
        self.tee: Sequence[bool] = self.config.get("tee") or ()
        self.byzantine: Set[int] = set(self.config.get("byzantine") or ())
        self.genesis = self.config.get("initial_leader")
        self.protocol = self.config.get("protocol", "mraft")
        self.violations: List[Violation] = []
        self._last_t = float("-inf")
        self._committed: Dict[int, str] = {}          # index -> digest (honest commits)
        self._max_committed = 0
        self._logs: Dict[int, List[str]] = {}         # node -> digests along its log
        self._prev: Dict[str, Tuple[str, int]] = {}   # digest -> (prev digest, index)
        self._leaders: Dict[int, int] = {}            # term -> leader
        self._votes: Dict[Tuple[int, int], Set[int]] = {}  # (term, candidate) -> voters
        self._acks: Dict[int, List[Tuple[int, int, str]]] = {}  # term -> (sender, index, digest)
        self._self_acks: Dict[int, List[Tuple[int, int, str]]] = {}
        self._cosign: Dict[Tuple[int, int, str], Set[int]] = {}
        self._tampered: Set[Tuple[int, int, int, str, str]] = set()
        self._checked_certs: Set[Tuple[int, int, str]] = set()
        self._bindings: Dict[Tuple[int, str, int, int], str] = {}
        self._sent: Set[Tuple[int, int, str]] = set()

    def honest(self, node: int) -> bool:
        return node not in self.byzantine

    def _flag(self, check: str, t: float, detail: str) -> None:
        self.violations.append(Violation(check, t, detail))

    # -- per-record dispatch ------------------------------------------------------------
    def feed(self, rec: Sequence[Any]) -> None:
        t, kind, src, dst, term, index, digest, note = rec
        if t < self._last_t:
            self._flag(CLOCK_MONOTONIC, t, f"time went back from {self._last_t} to {t}")
        self._last_t = max(self._last_t, t)
        handler = getattr(self, f"_on_{kind}", None)
        if handler is not None:
            handler(t, src, dst, term, index, digest, note)

    def _on_header(self, t, src, dst, term, index, digest, note):
        self.__init__(json.loads(note))

    def _on_send(self, t, src, dst, term, index, digest, note):
        self._sent.add((src, dst, note))
        kind = _msg_type(note)
        if kind == "Ack":
            self._acks.setdefault(term, []).append((src, index, digest))
        elif kind == "CoSiResponseMsg":
            if (src, term, index, digest, "CoSiResponseMsg") not in self._tampered:
                self._cosign.setdefault((term, index, digest), set()).add(src)
        if kind in _TEE_BINDING and self.tee and self.tee[src]:
            key = (src, kind, term, index)
            seen = self._bindings.setdefault(key, digest)
            if seen != digest:
                self._flag(TEE_NON_EQUIVOCATION, t,
                           f"TEE node {src} sent {kind} for term {term} index {index} with two digests")

    def _on_tamper(self, t, src, dst, term, index, digest, note):
        kind = note.split(":", 1)[-1].split(" ", 1)[0]
        self._tampered.add((src, term, index, digest, kind))
        if kind == "CoSiResponseMsg":
            self._cosign.get((term, index, digest), set()).discard(src)

    def _on_deliver(self, t, src, dst, term, index, digest, note):
        if (src, dst, note) not in self._sent:
            self._flag(NO_SPONTANEOUS_DELIVERY, t, f"{note} delivered {src}->{dst} without a send")
        if _msg_type(note) == "Vote":
            self._votes.setdefault((term, dst), set()).add(src)

    def _on_drop(self, t, src, dst, term, index, digest, note):
        if (src, dst, _msg_id(note)) not in self._sent:
            self._flag(NO_SPONTANEOUS_DELIVERY, t, f"{note} dropped {src}->{dst} without a send")

    def _on_append(self, t, src, dst, term, index, digest, note):
        self._prev.setdefault(digest, (note, index))
        log = self._logs.setdefault(src, [])
        del log[index - 1:]
        if len(log) == index - 1:
            log.append(digest)

    def _on_truncate(self, t, src, dst, term, index, digest, note):
        del self._logs.setdefault(src, [])[index - 1:]

    def _on_ack(self, t, src, dst, term, index, digest, note):
        self._self_acks.setdefault(term, []).append((src, index, digest))

    def _on_cosign(self, t, src, dst, term, index, digest, note):
        pass

    def _on_commit(self, t, src, dst, term, index, digest, note):
        if not self.honest(src):
            return
        seen = self._committed.get(index)
        if seen is None:
            self._committed[index] = digest
            self._max_committed = max(self._max_committed, index)
        elif seen != digest:
            self._flag(AGREEMENT, t, f"node {src} committed {digest[:12]} at index {index}, "
                                     f"another honest node committed {seen[:12]}")

    def _on_role(self, t, src, dst, term, index, digest, note):
        if note != "leader":
            return
        holder = self._leaders.setdefault(term, src)
        if holder != src:
            self._flag(ELECTION_SAFETY, t, f"nodes {holder} and {src} both lead term {term}")
        if self.q_elec and not (term <= 1 and src == self.genesis):
            voters = self._votes.get((term, src), set()) | {src}
            if len(voters) < self.q_elec:
                self._flag(ELECTION_SAFETY, t, f"node {src} leads term {term} with only "
                                               f"{len(voters)} votes (need {self.q_elec})")
        if not self.honest(src) or self._max_committed == 0:
            return
        m = self._max_committed
        log = self._logs.get(src, [])
        if len(log) < m or log[m - 1] != self._committed[m]:
            self._flag(DURABILITY, t, f"node {src} became leader of term {term} without "
                                      f"committed index {m}")

    def _on_certified(self, t, src, dst, term, index, digest, note):
        if not self.honest(src) or not self.q_rep:
            return
        key = (term, index, digest)
        if key in self._checked_certs:
            return
        self._checked_certs.add(key)
        kind, _, rest = note.partition(":")
        leader = int(rest.rsplit("leader=", 1)[1]) if "leader=" in rest else src
        if kind == "cert":
            backers = {s for s, i, d in self._acks.get(term, ()) if i >= index and self._reaches(d, i, index, digest)}
            backers |= {s for s, i, d in self._self_acks.get(term, ())
                        if s == leader and i >= index and self._reaches(d, i, index, digest)}
            need = self.q_rep
        else:
            backers = self._cosign.get(key, set()) - {leader}
            need = self.q_rep
        if len(backers) < need:
            self._flag(CERT_SOUNDNESS, t, f"{kind} for term {term} index {index} backed by "
                                          f"{len(backers)} of {need} required nodes")

    def _reaches(self, d: str, i: int, m: int, target: str) -> bool:
        """Whether the chain ending in digest ``d`` at index ``i`` passes ``target`` at ``m``."""
        while i > m:
            link = self._prev.get(d)
            if link is None:
                return False
            d, i = link[0], i - 1
        return d == target


def check_trace(records: Iterable[Sequence[Any]], config: Optional[dict] = None) -> List[Violation]:
    checker = TraceChecker(config)
    for rec in records:
        checker.feed(rec)
    return checker.violations


def load_trace(path: str) -> List[tuple]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(record_from_json(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trace record ({exc})") from None
    return records


def verify_trace(path: str) -> List[Violation]:
    return check_trace(load_trace(path))
