"""Fault injection for the mixed fault model.

Any node may crash (crash-stop); only non-TEE nodes may turn Byzantine. A
Byzantine node runs the honest replica code, but a strategy object sits
between that code and the network. The strategy may rewrite or add outbound
messages, send extra messages after an inbound one, or change the node's
timers. It signs everything with the node's own key: it cannot forge other
nodes' signatures or enclave tags. Every tampered message is recorded in the
trace as a ``tamper`` event.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core import ClusterConfig, ConfigError, LogEntry, Request, chain_digest
from .mraft.messages import PreVote, PreVoteGrant, RequestVote, Vote
from .protocol import Message
from .simnet import Partition

CRASH = "crash"
PARTITION = "partition"
BYZANTINE = "byzantine"
FAULT_KINDS = (CRASH, PARTITION, BYZANTINE)


# -- strategies --------------------------------------------------------------------
class ByzantineStrategy:
    """Honest behaviour; subclasses override the hooks they need."""

    name = "honest"

    def __init__(self, node: int, active_from: float = 0.0, **params: Any):
        if params:
            raise ConfigError(f"strategy {self.name}: unknown parameters {sorted(params)}")
        self.node = node
        self.active_from = active_from

    def active(self, world) -> bool:
        return world.clock >= self.active_from

    def rewrite(self, replica, sends: List[Tuple[int, Message]], world) -> List[Tuple[int, Message]]:
        if not self.active(world):
            return sends
        return self._rewrite(replica, sends, world)

    def after_receive(self, replica, src: int, msg: Message, world) -> List[Tuple[int, Message]]:
        if not self.active(world):
            return []
        return self._after_receive(replica, src, msg, world)

    def timer_interval(self, name: str, interval: Tuple[float, float]) -> Tuple[float, float]:
        return interval

    def extra_delay(self, dst: int, msg: Message, world) -> float:
        return 0.0

    # hooks ------------------------------------------------------------------------
    def _rewrite(self, replica, sends, world):
        return sends

    def _after_receive(self, replica, src, msg, world):
        return []

    def _tamper(self, world, dst: int, msg: Message, what: str) -> None:
        term, index, digest = msg.trace_fields()
        world.record("tamper", self.node, dst, term, index, digest,
                     f"{self.name}:{type(msg).__name__} {what}")


def _forged_digest(d: bytes) -> bytes:
    return hashlib.sha256(b"forged" + d).digest()


def _forged_entry(entry: LogEntry) -> LogEntry:
    fake = Request(0, hashlib.sha256(b"forged:%d:%d" % (entry.term, entry.index)).digest())
    return LogEntry(entry.term, entry.index, (fake,))


def _grouped(sends: Iterable[Tuple[int, Message]]) -> List[Tuple[Message, List[int]]]:
    """Group sends of one broadcast (same message object), keeping order."""
    groups: Dict[int, Tuple[Message, List[int]]] = {}
    for dst, msg in sends:
        groups.setdefault(id(msg), (msg, []))[1].append(dst)
    return list(groups.values())


class Equivocate(ByzantineStrategy):
    """Send a conflicting entry (or digest) to half of each broadcast.

    Point-to-point messages are duplicated: the recipient gets the honest one
    followed by a conflicting one.
    """

    name = "equivocate"

    def __init__(self, node: int, active_from: float = 0.0):
        super().__init__(node, active_from)
        # forge each point-to-point message once; re-forging every retransmission
        # would let the honest retry logic amplify traffic without bound
        self._duplicated: set = set()

    def _forge(self, replica, msg: Message) -> Optional[Message]:
        entry = getattr(msg, "entry", None)
        if isinstance(entry, LogEntry) and hasattr(msg, "digest"):
            fake = _forged_entry(entry)
            d = chain_digest(replica.log.digest(entry.index - 1), fake.term, fake.index, fake.payload_digest)
            return replica.sign(dataclasses.replace(msg, entry=fake, digest=d, sig=None))
        if isinstance(getattr(msg, "digest", None), bytes) and hasattr(msg, "signer"):
            return replica.sign(dataclasses.replace(msg, digest=_forged_digest(msg.digest), sig=None))
        return None

    def _rewrite(self, replica, sends, world):
        out = []
        for msg, dsts in _grouped(sends):
            forged = self._forge(replica, msg)
            if forged is None:
                out += [(d, msg) for d in dsts]
                continue
            if len(dsts) == 1:
                key = (dsts[0], type(msg).__name__) + tuple(msg.trace_fields()[:2])
                if key in self._duplicated:
                    out.append((dsts[0], msg))
                    continue
                self._duplicated.add(key)
                self._tamper(world, dsts[0], forged, "duplicate")
                out += [(dsts[0], msg), (dsts[0], forged)]
                continue
            second_half = set(sorted(dsts)[len(dsts) // 2:])
            for d in dsts:
                if d in second_half:
                    self._tamper(world, d, forged, "conflicting")
                    out.append((d, forged))
                else:
                    out.append((d, msg))
        return out


class DoubleVote(ByzantineStrategy):
    """Vote for every candidate that asks, whatever the term."""

    name = "double_vote"

    def _after_receive(self, replica, src, msg, world):
        if isinstance(msg, PreVote) and msg.candidate == src:
            grant = replica.sign(PreVoteGrant(term=msg.next_term, voter=self.node, candidate=src))
            self._tamper(world, src, grant, "unconditional pre-vote")
            return [(src, grant)]
        if not isinstance(msg, RequestVote) or msg.candidate != src:
            return []
        vote = replica.sign(Vote(term=msg.new_term, voter=self.node, candidate=src))
        self._tamper(world, src, vote, "unconditional vote")
        return [(src, vote)]


class StaleLie(ByzantineStrategy):
    """Claim an inflated last log position and call elections eagerly."""

    name = "stale_lie"

    def __init__(self, node: int, active_from: float = 0.0, term_boost: int = 1000,
                 index_boost: int = 1000, timeout_ms: Sequence[float] = (100.0, 140.0)):
        super().__init__(node, active_from)
        self.term_boost = int(term_boost)
        self.index_boost = int(index_boost)
        self.timeout_ms = (float(timeout_ms[0]), float(timeout_ms[1]))

    def timer_interval(self, name, interval):
        return self.timeout_ms if name == "election" else interval

    def _rewrite(self, replica, sends, world):
        out = []
        for msg, dsts in _grouped(sends):
            if isinstance(msg, (PreVote, RequestVote)):
                msg = replica.sign(dataclasses.replace(
                    msg,
                    last_log_term=msg.last_log_term + self.term_boost,
                    last_log_index=msg.last_log_index + self.index_boost,
                    sig=None,
                ))
                for d in dsts:
                    self._tamper(world, d, msg, "inflated log position")
            out += [(d, msg) for d in dsts]
        return out


class DigestCorrupt(ByzantineStrategy):
    """Acknowledge a wrong digest; co-sign with a wrong response."""

    name = "digest_corrupt"

    def _rewrite(self, replica, sends, world):
        out = []
        for dst, msg in sends:
            kind = type(msg).__name__
            if kind in ("Ack", "CoSiCommitMsg"):
                msg = replica.sign(dataclasses.replace(msg, digest=_forged_digest(msg.digest), sig=None))
                self._tamper(world, dst, msg, "wrong digest")
            elif kind == "CoSiResponseMsg":
                msg = replica.sign(dataclasses.replace(msg, response=msg.response + 1, sig=None))
                self._tamper(world, dst, msg, "wrong response")
            out.append((dst, msg))
        return out


class Mute(ByzantineStrategy):
    """Stay silent, towards everyone or only towards ``targets``."""

    name = "mute"

    def __init__(self, node: int, active_from: float = 0.0, targets: Optional[Sequence[int]] = None):
        super().__init__(node, active_from)
        self.targets = None if targets is None else {int(t) for t in targets}

    def _rewrite(self, replica, sends, world):
        out = []
        for dst, msg in sends:
            if self.targets is None or dst in self.targets:
                self._tamper(world, dst, msg, "suppressed")
            else:
                out.append((dst, msg))
        return out


class Delay(ByzantineStrategy):
    """Hold each outbound message back by up to ``max_ms`` (uniform, seeded)."""

    name = "delay"

    def __init__(self, node: int, active_from: float = 0.0, max_ms: float = 100.0):
        super().__init__(node, active_from)
        if max_ms < 0:
            raise ValueError("max_ms must be non-negative")
        self.max_ms = float(max_ms)

    def extra_delay(self, dst: int, msg: Message, world) -> float:
        if not self.active(world) or self.max_ms == 0:
            return 0.0
        return world.rng.uniform(0.0, self.max_ms)


STRATEGIES = {cls.name: cls for cls in (Equivocate, DoubleVote, StaleLie, DigestCorrupt, Mute, Delay)}


# -- schedule -----------------------------------------------------------------------
@dataclass(frozen=True)
class Fault:
    kind: str
    at: float = 0.0
    node: Optional[int] = None
    until: float = math.inf
    group: Tuple[int, ...] = ()
    other: Optional[Tuple[int, ...]] = None
    strategy: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict:
        out: Dict[str, Any] = {"fault": self.kind, "at": self.at}
        if self.kind == PARTITION:
            out["group"] = list(self.group)
            if self.other is not None:
                out["other"] = list(self.other)
            if self.until != math.inf:
                out["until"] = self.until
        else:
            out["node"] = self.node
        if self.kind == BYZANTINE:
            out["strategy"] = self.strategy
            if self.params:
                out["params"] = dict(self.params)
        return out


def _path_error(path: str, msg: str) -> ConfigError:
    return ConfigError(f"{path}: {msg}")


def _node(value: Any, n: int, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise _path_error(path, f"expected a node id, got {value!r}")
    if not 0 <= value < n:
        raise _path_error(path, f"node {value} outside 0..{n - 1}")
    return value


def _time(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
        raise _path_error(path, f"expected a non-negative time in ms, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class FaultSchedule:
    faults: Tuple[Fault, ...] = ()

    @classmethod
    def from_json(cls, raw: Any, config: ClusterConfig, path: str = "faults") -> "FaultSchedule":
        if raw is None:
            return cls()
        if not isinstance(raw, list):
            raise _path_error(path, "expected a list of fault entries")
        faults = []
        for i, item in enumerate(raw):
            p = f"{path}[{i}]"
            if not isinstance(item, dict):
                raise _path_error(p, "expected an object")
            kind = item.get("fault")
            if kind not in FAULT_KINDS:
                raise _path_error(f"{p}.fault", f"expected one of {', '.join(FAULT_KINDS)}, got {kind!r}")
            allowed = {"fault", "at", "node", "until", "group", "other", "strategy", "params"}
            unknown = sorted(set(item) - allowed)
            if unknown:
                raise _path_error(p, f"unknown field(s) {', '.join(unknown)}")
            at = _time(item.get("at", 0.0), f"{p}.at")
            if kind == PARTITION:
                group = item.get("group")
                if not isinstance(group, list) or not group:
                    raise _path_error(f"{p}.group", "expected a non-empty list of node ids")
                group = tuple(_node(v, config.n, f"{p}.group[{j}]") for j, v in enumerate(group))
                other = item.get("other")
                if other is not None:
                    if not isinstance(other, list):
                        raise _path_error(f"{p}.other", "expected a list of node ids")
                    other = tuple(_node(v, config.n, f"{p}.other[{j}]") for j, v in enumerate(other))
                until = _time(item.get("until", math.inf), f"{p}.until")
                if until <= at:
                    raise _path_error(f"{p}.until", "must be later than 'at'")
                faults.append(Fault(PARTITION, at=at, until=until, group=group, other=other))
                continue
            node = _node(item.get("node"), config.n, f"{p}.node")
            if kind == CRASH:
                faults.append(Fault(CRASH, at=at, node=node))
                continue
            strategy = item.get("strategy")
            if strategy not in STRATEGIES:
                raise _path_error(f"{p}.strategy",
                                  f"expected one of {', '.join(sorted(STRATEGIES))}, got {strategy!r}")
            params = item.get("params", {})
            if not isinstance(params, dict):
                raise _path_error(f"{p}.params", "expected an object")
            try:
                STRATEGIES[strategy](node, at, **params)
            except (TypeError, ValueError) as exc:
                raise _path_error(f"{p}.params", str(exc)) from None
            faults.append(Fault(BYZANTINE, at=at, node=node, strategy=strategy, params=dict(params)))
        schedule = cls(tuple(faults))
        schedule.validate(config, path)
        return schedule

    def to_json(self) -> list:
        return [f.to_json() for f in self.faults]

    @property
    def crashed(self) -> Tuple[int, ...]:
        return tuple(sorted({f.node for f in self.faults if f.kind == CRASH}))

    @property
    def byzantine(self) -> Tuple[int, ...]:
        return tuple(sorted({f.node for f in self.faults if f.kind == BYZANTINE}))

    @property
    def faulty(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.crashed) | set(self.byzantine)))

    def validate(self, config: ClusterConfig, path: str = "faults") -> None:
        for i, f in enumerate(self.faults):
            if f.kind == BYZANTINE and config.tee[f.node]:
                raise _path_error(f"{path}[{i}].node",
                                  f"node {f.node} has a TEE and can only crash, not turn Byzantine")
        seen = set()
        for i, f in enumerate(self.faults):
            if f.kind == BYZANTINE:
                if f.node in seen:
                    raise _path_error(f"{path}[{i}].node", f"node {f.node} already has a strategy")
                seen.add(f.node)
        if len(self.faulty) > config.f:
            raise _path_error(path, f"{len(self.faulty)} faulty nodes {list(self.faulty)} exceed f={config.f}")

    # -- installation ------------------------------------------------------------------
    def strategies(self) -> Dict[int, ByzantineStrategy]:
        return {
            f.node: STRATEGIES[f.strategy](f.node, f.at, **dict(f.params))
            for f in self.faults
            if f.kind == BYZANTINE
        }

    def install(self, world) -> None:
        """Arm crashes and partitions and attach Byzantine strategies to ``world``."""
        for f in self.faults:
            if f.kind == CRASH:
                if f.at <= 0:
                    world.crash(f.node)
                else:
                    world.schedule_call(f.at, lambda _t, node=f.node: world.crash(node))
            elif f.kind == PARTITION:
                other = None if f.other is None else set(f.other)
                world.network.partitions.append(Partition(set(f.group), f.at, f.until, other))
        world.byzantine.update(self.strategies())


def apply_fault_filter(schedule: FaultSchedule, world) -> None:
    """Attach ``schedule`` to ``world``; the world consults it on every event."""
    schedule.install(world)


# -- canned scenarios -----------------------------------------------------------------
def _layout(f: int) -> Tuple[int, List[bool], List[int]]:
    """n, TEE flags (first f+1 nodes) and the f non-TEE nodes used as Byzantine."""
    n = 3 * f + 2
    tee = [i <= f for i in range(n)]
    return n, tee, list(range(n - f, n))


def _byz(nodes: Sequence[int], strategy: str, **params) -> List[dict]:
    out = []
    for v in nodes:
        item = {"fault": BYZANTINE, "node": v, "at": 0, "strategy": strategy}
        if params:
            item["params"] = dict(params)
        out.append(item)
    return out


def canned_scenarios(f: int = 1) -> Dict[str, dict]:
    """Named adversarial scenarios for fault threshold ``f`` (scenario-file form)."""
    if f < 1:
        raise ConfigError("canned scenarios need f >= 1")
    n, tee, byz = _layout(f)
    base = {
        "protocol": "mraft",
        "n": n,
        "tee": tee,
        "latency": "table1",
        "initial_leader": 0,
        "workload": {"count": 20, "interval_ms": 40.0},
        "run_ms": 1500.0,
    }

    def scen(name: str, **kw) -> dict:
        out = dict(base, name=f"{name}_f{f}")
        out.update(kw)
        return out

    # Entry-loss layout: leader L, candidate C, up-to-date U (f), stale S (f), Byzantine B (f).
    L, C = 0, 1
    U = list(range(2, f + 2))
    S = list(range(f + 2, 2 * f + 2))
    B = list(range(2 * f + 2, 3 * f + 2))
    ablation_tee = [i <= f + 1 for i in range(n)]

    return {
        "leader_crash": scen(
            "leader_crash",
            faults=[{"fault": CRASH, "node": 0, "at": 400}],
            run_ms=3000.0,
        ),
        "equivocating_follower": scen(
            "equivocating_follower", faults=_byz(byz, "equivocate"),
        ),
        "equivocating_leader": scen(
            "equivocating_leader", initial_leader=n - 1, non_tee_leader="cosi",
            faults=_byz(byz, "equivocate"),
        ),
        "double_vote": scen(
            "double_vote", initial_leader=None, faults=_byz(byz, "double_vote"),
        ),
        "stale_lie": scen(
            "stale_lie",
            faults=[{"fault": PARTITION, "group": [0], "at": 300, "until": 900}]
            + _byz(byz, "stale_lie"),
            run_ms=2000.0,
        ),
        "digest_corrupt": scen(
            "digest_corrupt", faults=_byz(byz, "digest_corrupt"),
        ),
        "partition_heal": scen(
            "partition_heal",
            faults=[{"fault": PARTITION, "group": [0], "at": 200, "until": 900}],
            run_ms=2000.0,
        ),
        "mute": scen("mute", faults=_byz(byz, "mute")),
        "entry_loss_ablation": scen(
            "entry_loss_ablation",
            tee=ablation_tee,
            faults=[{"fault": PARTITION, "group": [C] + S, "other": [L] + U, "at": 0, "until": 1200}]
            + _byz(B, "double_vote"),
            run_ms=2000.0,
        ),
    }


SAFETY_SCENARIOS = (
    "leader_crash",
    "equivocating_follower",
    "equivocating_leader",
    "double_vote",
    "stale_lie",
    "digest_corrupt",
    "partition_heal",
    "mute",
)
