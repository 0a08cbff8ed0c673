"""Deterministic discrete-event network simulator.

One :class:`World` owns a virtual clock, an event queue ordered by
``(deliver_at, sequence)``, the replicas, a single seeded RNG and an
append-only trace. Links are FIFO: a message never overtakes an earlier one
on the same directed link.

Trace records are tuples ``(t, kind, from, to, term, index, digest, note)``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .core import LogEntry, NodeId, Request
from .protocol import Effects, Message, NotLeader, Replica

log = logging.getLogger(__name__)

TRACE_FIELDS = ("t", "kind", "from", "to", "term", "index", "digest", "note")

REGIONS = ("East US", "Canada Central", "UK South", "West Europe", "Southeast Asia")

# Mean inter-datacenter latency in ms (diagonal: two VMs in one region).
TABLE1 = (
    (1.71, 27.89, 75.34, 82.82, 219.86),
    (27.89, 3.50, 90.0, 93.94, 218.11),
    (75.34, 90.0, 1.27, 8.95, 156.12),
    (82.82, 93.94, 8.95, 2.35, 160.39),
    (219.86, 218.11, 156.12, 160.39, 2.12),
)

MSG = 0
TIMER = 1
CLIENT = 2
CALL = 3


class LatencyMatrix:
    """n x n one-way delays in simulated ms; self-delivery is free."""

    def __init__(self, delays: Sequence[Sequence[float]]):
        rows = [list(map(float, r)) for r in delays]
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise ValueError("latency matrix must be square")
        if any(v < 0 for r in rows for v in r):
            raise ValueError("latencies must be non-negative")
        self.delays = rows

    @property
    def n(self) -> int:
        return len(self.delays)

    def __call__(self, src: int, dst: int) -> float:
        return 0.0 if src == dst else self.delays[src][dst]

    @classmethod
    def uniform(cls, n: int, ms: float) -> "LatencyMatrix":
        return cls([[ms] * n for _ in range(n)])

    @classmethod
    def table1(cls, n: int, semantics: str = "rtt") -> "LatencyMatrix":
        """Round-robin regions over Table-1 latencies.

        With ``semantics="rtt"`` the table values are round-trip times and the
        one-way delay is half of them; ``"one_way"`` uses them verbatim.
        """
        scale = {"rtt": 0.5, "one_way": 1.0}[semantics]
        k = len(REGIONS)
        return cls([[TABLE1[i % k][j % k] * scale for j in range(n)] for i in range(n)])


def region_of(node: int) -> str:
    return REGIONS[node % len(REGIONS)]


@dataclass
class Partition:
    """Cuts links between ``group`` and ``other`` (default: everyone else)."""

    group: Set[int]
    start: float
    end: float = float("inf")
    other: Optional[Set[int]] = None

    def separates(self, a: int, b: int, t: float) -> bool:
        if not self.start <= t < self.end:
            return False
        if self.other is None:
            return (a in self.group) != (b in self.group)
        return (a in self.group and b in self.other) or (b in self.group and a in self.other)


@dataclass
class NetworkConditions:
    jitter_ms: float = 1.0
    gst_ms: float = 0.0
    pre_gst_delay_max_ms: float = 0.0
    partitions: List[Partition] = field(default_factory=list)


class World:
    """Simulation state: clock, queue, replicas, rng, faults and trace."""

    def __init__(
        self,
        replicas: Sequence[Replica],
        latency: LatencyMatrix,
        seed: int = 0,
        network: Optional[NetworkConditions] = None,
        byzantine: Optional[Dict[int, object]] = None,
        client_region_node: int = 0,
    ):
        if latency.n != len(replicas):
            raise ValueError("latency matrix size must match replica count")
        self.replicas = list(replicas)
        self.latency = latency
        self.network = network or NetworkConditions()
        self.rng = random.Random(seed)
        self.seed = seed
        self.clock = 0.0
        self.queue: list = []
        self.seq = 0
        self.msg_seq = 0
        self.trace: List[tuple] = []
        self.crashed: Set[int] = set()
        self.byzantine: Dict[int, object] = dict(byzantine or {})
        self.timer_gen: Dict[Tuple[int, str], int] = {}
        self.link_tail: Dict[Tuple[int, int], float] = {}
        self.client_region_node = client_region_node
        self.commit_listeners: List[Callable[[int, List[LogEntry], float], None]] = []
        self.reply_listeners: List[Callable[[int, NotLeader, float], None]] = []
        self.request_listeners: List[Callable[[int, Request, float], None]] = []
        self.sent_by_type: Dict[str, int] = {}
        self.sent_by_category: Dict[str, int] = {}
        self.started = False

    # -- scheduling ---------------------------------------------------------------------
    def _push(self, at: float, kind: int, payload: tuple) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (at, self.seq, kind, payload))

    def schedule_call(self, at: float, fn: Callable[[float], None]) -> None:
        self._push(max(at, self.clock), CALL, (fn,))

    def schedule_client_request(self, at: float, dst: int, request: Request) -> None:
        delay = self.latency(self.client_region_node, dst)
        self._push(max(at, self.clock) + delay, CLIENT, (dst, request))

    def set_timer(self, node: int, name: str, fire_at: float) -> None:
        key = (node, name)
        gen = self.timer_gen.get(key, 0) + 1
        self.timer_gen[key] = gen
        self._push(fire_at, TIMER, (node, name, gen))

    def cancel_timer(self, node: int, name: str) -> None:
        # bumping the generation turns any queued fire into a no-op
        key = (node, name)
        self.timer_gen[key] = self.timer_gen.get(key, 0) + 1

    def crash(self, node: int) -> None:
        if node not in self.crashed:
            self.crashed.add(node)
            self.record("crash", node, node, 0, 0, "", "")

    # -- trace ------------------------------------------------------------------------------
    def record(self, kind: str, src: int, dst: int, term: int, index: int, digest: str, note: str) -> None:
        self.trace.append((self.clock, kind, src, dst, term, index, digest, note))

    def trace_lines(self) -> Iterable[str]:
        for rec in self.trace:
            yield json.dumps(dict(zip(TRACE_FIELDS, rec)), separators=(",", ":"))

    def trace_digest(self) -> str:
        h = hashlib.sha256()
        for line in self.trace_lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    # -- effects --------------------------------------------------------------------------------
    def _apply(self, node: int, fx: Effects) -> None:
        if node in self.crashed:
            return
        now = self.clock
        for kind, term, index, digest, note in fx.events:
            self.record(kind, node, node, term, index, digest, note)
        sends = fx.sends
        strategy = self.byzantine.get(node)
        if strategy is not None:
            sends = strategy.rewrite(self.replicas[node], sends, self)
        for dst, msg in sends:
            self._send(node, dst, msg)
        for name, interval in fx.timers:
            if interval is None:
                self.cancel_timer(node, name)
                continue
            if strategy is not None:
                interval = strategy.timer_interval(name, interval)
            lo, hi = interval
            delay = lo if hi <= lo else self.rng.uniform(lo, hi)
            self.set_timer(node, name, now + delay)
        if fx.commits:
            for cb in self.commit_listeners:
                cb(node, fx.commits, now)
        for reply in fx.replies:
            for cb in self.reply_listeners:
                cb(node, reply, now)

    def _send(self, src: int, dst: int, msg: Message) -> None:
        self.msg_seq += 1
        mid = self.msg_seq
        name = type(msg).__name__
        term, index, digest = msg.trace_fields()
        note = f"{name}#{mid}"
        self.record("send", src, dst, term, index, digest, note)
        self.sent_by_type[name] = self.sent_by_type.get(name, 0) + 1
        cat = msg.category
        self.sent_by_category[cat] = self.sent_by_category.get(cat, 0) + 1
        net = self.network
        now = self.clock
        if any(p.separates(src, dst, now) for p in net.partitions):
            self.record("drop", src, dst, term, index, digest, note + " partition")
            return
        at = now + self.latency(src, dst)
        if net.jitter_ms > 0:
            at += self.rng.random() * net.jitter_ms
        if now < net.gst_ms and net.pre_gst_delay_max_ms > 0:
            at += self.rng.uniform(0.0, net.pre_gst_delay_max_ms)
        strategy = self.byzantine.get(src)
        if strategy is not None:
            at += strategy.extra_delay(dst, msg, self)
        link = (src, dst)
        at = max(at, self.link_tail.get(link, 0.0))
        self.link_tail[link] = at
        self._push(at, MSG, (src, dst, msg, note))

    # -- main loop ----------------------------------------------------------------------------------
    def start(self) -> None:
        if self.started:
            return
        self.started = True
        for r in self.replicas:
            if r.id not in self.crashed:
                self._apply(r.id, r.start(self.clock))

    def step(self) -> bool:
        """Process the earliest event; False once the queue is empty."""
        if not self.queue:
            return False
        at, _, kind, payload = heapq.heappop(self.queue)
        if at < self.clock:
            raise RuntimeError("event queue went backwards")
        self.clock = at
        if kind == MSG:
            src, dst, msg, note = payload
            term, index, digest = msg.trace_fields()
            if dst in self.crashed:
                self.record("drop", src, dst, term, index, digest, note + " crashed")
                return True
            if any(p.separates(src, dst, at) for p in self.network.partitions):
                self.record("drop", src, dst, term, index, digest, note + " partition")
                return True
            self.record("deliver", src, dst, term, index, digest, note)
            replica = self.replicas[dst]
            self._apply(dst, replica.on_message(src, msg, at))
            strategy = self.byzantine.get(dst)
            if strategy is not None and dst not in self.crashed:
                extra = strategy.after_receive(replica, src, msg, self)
                if extra:
                    self._apply(dst, Effects(sends=list(extra)))
        elif kind == TIMER:
            node, name, gen = payload
            if self.timer_gen.get((node, name)) != gen or node in self.crashed:
                return True
            self._apply(node, self.replicas[node].on_timer(name, at))
        elif kind == CLIENT:
            dst, request = payload
            if dst in self.crashed:
                return True
            self.record("request", -1, dst, 0, 0, "", f"req#{request.request_id}")
            for cb in self.request_listeners:
                cb(dst, request, at)
            self._apply(dst, self.replicas[dst].on_client_request(request, at))
        else:
            payload[0](at)
        return True

    def run(self, until: float = float("inf"), stop: Optional[Callable[["World"], bool]] = None) -> "World":
        self.start()
        while self.queue and self.queue[0][0] <= until:
            self.step()
            if stop is not None and stop(self):
                break
        if until != float("inf") and (not self.queue or self.queue[0][0] > until):
            self.clock = max(self.clock, until)
        return self

    # -- introspection ---------------------------------------------------------------------------------
    def alive(self) -> List[int]:
        return [r.id for r in self.replicas if r.id not in self.crashed]

    def current_leader(self) -> Optional[int]:
        best = None
        for r in self.replicas:
            if r.id in self.crashed or not r.is_leader:
                continue
            if best is None or r.current_term > self.replicas[best].current_term:
                best = r.id
        return best
