"""Plumbing shared by every replica implementation.

Replicas are deterministic state machines. The simulator hands each one an
input (message, timer fire or client request) together with the current
simulated time and gets back an :class:`Effects` bundle describing what the
replica wants done: messages to send, timers to arm or cancel, entries it
committed and trace notes. Replicas never read clocks or random sources.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, ClassVar, List, Optional, Sequence, Tuple

from . import crypto
from .core import ClusterConfig, LogEntry, NodeId, Request

# Message categories used for accounting.
REPLICATION = "replication"
HEARTBEAT = "heartbeat"
ELECTION = "election"
CATCHUP = "catchup"
CLIENT = "client"


def canonical(x: Any) -> bytes:
    """Canonical byte encoding of a message (or any nested field)."""
    if x is None:
        return b""
    if isinstance(x, (bool, int, bytes, str)):
        return crypto.encode_fields(x)
    if isinstance(x, LogEntry):
        return crypto.encode_fields(x.term, x.index, x.payload_digest)
    if isinstance(x, Request):
        return crypto.encode_fields(x.request_id, x.payload)
    if isinstance(x, crypto.Signature):
        return crypto.encode_fields(x.commitment, x.response)
    if isinstance(x, crypto.ParticipationBitmap):
        return x.encode()
    if isinstance(x, (tuple, list)):
        return crypto.encode_fields(*(canonical(i) for i in x))
    if dataclasses.is_dataclass(x):
        parts = [type(x).__name__]
        parts += [canonical(getattr(x, f.name)) for f in dataclasses.fields(x) if f.name != "sig"]
        return crypto.encode_fields(*parts)
    raise TypeError(f"cannot encode {type(x).__name__}")


@dataclass(frozen=True)
class Message:
    """Base class for protocol messages.

    ``sig`` authenticates the sender: an enclave signature for TEE nodes, an
    identity-key signature otherwise. It is excluded from the signed body.
    """

    category: ClassVar[str] = REPLICATION

    def trace_fields(self) -> Tuple[int, int, str]:
        """(term, index, digest-hex) for the trace record."""
        return (0, 0, "")

    def body(self) -> bytes:
        return canonical(self)


@dataclass(frozen=True)
class KeyRing:
    group: crypto.GroupParams
    identity: Tuple[crypto.KeyPair, ...]
    enclave: Tuple[Optional[crypto.KeyPair], ...]

    @classmethod
    def generate(cls, tee: Sequence[bool], seed: str = "genesis",
                 group: crypto.GroupParams = crypto.DEFAULT_GROUP) -> "KeyRing":
        return _keyring(tuple(bool(t) for t in tee), seed, group)

    def auth_key(self, node: NodeId) -> crypto.KeyPair:
        kp = self.enclave[node]
        return kp if kp is not None else self.identity[node]

    @property
    def identity_pks(self) -> Tuple[int, ...]:
        return tuple(k.pk for k in self.identity)


@lru_cache(maxsize=64)
def _keyring(tee: Tuple[bool, ...], seed: str, group: crypto.GroupParams) -> KeyRing:
    ident = tuple(crypto.keygen(f"{seed}/identity/{i}", group) for i in range(len(tee)))
    encl = tuple(
        crypto.keygen(f"{seed}/enclave/{i}", group) if t else None for i, t in enumerate(tee)
    )
    return KeyRing(group=group, identity=ident, enclave=encl)


def sign_message(msg: Message, keys: KeyRing, sender: NodeId) -> Message:
    kp = keys.auth_key(sender)
    sig = crypto.sign(kp.sk, msg.body(), "msg", keys.group)
    return dataclasses.replace(msg, sig=sig)


def verify_message(msg: Message, keys: KeyRing, sender: NodeId) -> bool:
    sig = getattr(msg, "sig", None)
    if sig is None or not 0 <= sender < len(keys.identity):
        return False
    return crypto.verify(keys.auth_key(sender).pk, msg.body(), sig, keys.group)


@dataclass(frozen=True)
class ClientRequest(Message):
    category: ClassVar[str] = CLIENT
    request: Request = None
    sig: Any = None


@dataclass(frozen=True)
class NotLeader:
    request_id: int
    leader_id: Optional[NodeId]


@dataclass
class Effects:
    sends: List[Tuple[NodeId, Message]] = field(default_factory=list)
    timers: List[Tuple[str, Optional[Tuple[float, float]]]] = field(default_factory=list)
    commits: List[LogEntry] = field(default_factory=list)
    events: List[Tuple[str, int, int, str, str]] = field(default_factory=list)
    replies: List[NotLeader] = field(default_factory=list)

    def send(self, dst: NodeId, msg: Message) -> None:
        self.sends.append((dst, msg))

    def set_timer(self, name: str, lo: float, hi: Optional[float] = None) -> None:
        """Arm ``name`` to fire after a delay drawn uniformly from [lo, hi)."""
        self.timers.append((name, (lo, lo if hi is None else hi)))

    def cancel_timer(self, name: str) -> None:
        self.timers.append((name, None))

    def note(self, kind: str, term: int = 0, index: int = 0, digest: bytes = b"", note: str = "") -> None:
        self.events.append((kind, term, index, digest.hex() if digest else "", note))


class Replica:
    """Common scaffolding; subclasses implement the ``_on_*`` hooks."""

    protocol: ClassVar[str] = "base"

    def __init__(self, node_id: NodeId, config: ClusterConfig, keys: KeyRing):
        self.id = node_id
        self.config = config
        self.keys = keys
        self._fx = Effects()

    # -- entry points used by the simulator ---------------------------------
    def start(self, now: float) -> Effects:
        return self._run(self._on_start, now)

    def on_message(self, src: NodeId, msg: Message, now: float) -> Effects:
        return self._run(self._on_message, src, msg, now)

    def on_timer(self, name: str, now: float) -> Effects:
        return self._run(self._on_timer, name, now)

    def on_client_request(self, request: Request, now: float) -> Effects:
        return self._run(self._on_client_request, request, now)

    def _run(self, fn, *args) -> Effects:
        self._fx = Effects()
        fn(*args)
        fx, self._fx = self._fx, Effects()
        return fx

    # -- helpers --------------------------------------------------------------
    @property
    def is_tee(self) -> bool:
        return self.config.tee[self.id]

    def sign(self, msg: Message) -> Message:
        return sign_message(msg, self.keys, self.id)

    def verify(self, msg: Message, sender: NodeId) -> bool:
        return verify_message(msg, self.keys, sender)

    def send(self, dst: NodeId, msg: Message, signed: bool = True) -> None:
        self._fx.send(dst, self.sign(msg) if signed else msg)

    def broadcast(self, msg: Message, to: Optional[Sequence[NodeId]] = None) -> None:
        msg = self.sign(msg)
        for dst in self.config.others(self.id) if to is None else to:
            self._fx.send(dst, msg)

    # -- hooks ----------------------------------------------------------------
    def _on_start(self, now: float) -> None:
        pass

    def _on_message(self, src: NodeId, msg: Message, now: float) -> None:
        raise NotImplementedError

    def _on_timer(self, name: str, now: float) -> None:
        pass

    def _on_client_request(self, request: Request, now: float) -> None:
        raise NotImplementedError

    # -- introspection used by the harness -------------------------------------
    @property
    def is_leader(self) -> bool:
        return False

    @property
    def current_term(self) -> int:
        return 0
