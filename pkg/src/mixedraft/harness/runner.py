"""Build a world from a scenario, drive the client workload, extract metrics."""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

from ..baselines import PBFTOptions, PBFTReplica, RaftOptions, RaftReplica
from ..core import ClusterConfig, Request
from ..invariants import check_trace, header_record
from ..mraft import MRaftOptions, MRaftReplica
from ..protocol import REPLICATION, KeyRing
from ..simnet import NetworkConditions, World
from .scenario import Scenario
from .workload import generate_workload


@dataclass
class LatencyStats:
    count: int = 0
    mean: Optional[float] = None
    median: Optional[float] = None
    p99: Optional[float] = None

    @classmethod
    def of(cls, samples: List[float]) -> "LatencyStats":
        if not samples:
            return cls()
        s = sorted(samples)
        rank = max(0, -(-99 * len(s) // 100) - 1)  # nearest-rank percentile
        return cls(len(s), statistics.fmean(s), statistics.median(s), s[rank])


@dataclass
class MetricsReport:
    scenario: dict
    seed: int
    protocol: str
    n: int
    f: int
    committed_batches: int
    committed_requests: int
    commit_latency_ms: LatencyStats
    all_replica_latency_ms: LatencyStats
    throughput_rps: float
    messages_total: int
    messages_per_commit: Optional[float]
    messages_by_category: Dict[str, int]
    messages_by_type: Dict[str, int]
    elections: int
    leader_history: List[dict]
    leader_recovery: List[dict]
    evidence: int
    sim_time_ms: float
    trace_digest: str
    violations: List[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False)


def run_config(scen: Scenario, config: ClusterConfig) -> dict:
    """The configuration echoed in the trace header (enough to re-check the trace)."""
    return {
        "scenario": scen.name,
        "protocol": scen.protocol,
        "seed": scen.seed,
        "n": config.n,
        "f": config.f,
        "q_rep": config.q_rep,
        "q_elec": config.q_elec,
        "tee": list(config.tee),
        "byzantine": list(scen.faults.byzantine),
        "crashed": list(scen.faults.crashed),
        "initial_leader": scen.initial_leader,
    }


def build_replicas(scen: Scenario, config: ClusterConfig) -> list:
    if scen.protocol == "mraft":
        keys = KeyRing.generate(config.tee)
        opts = MRaftOptions(
            tee_timeout_ms=scen.tee_timeout_ms,
            non_tee_timeout_ms=scen.non_tee_timeout_ms,
            batch_max_bytes=scen.batch_max_bytes,
            batch_timeout_ms=scen.batch_timeout_ms,
            non_tee_leader=scen.non_tee_leader,
            vote_rule=scen.vote_rule,
        )
        return [MRaftReplica(i, config, keys, opts, scen.initial_leader) for i in config.nodes]
    if scen.protocol == "raft":
        opts = RaftOptions(
            timeout_ms=scen.tee_timeout_ms,
            heartbeat_ms=scen.tee_timeout_ms[0] / 3.0,
            batch_max_bytes=scen.batch_max_bytes,
            batch_timeout_ms=scen.batch_timeout_ms,
        )
        return [RaftReplica(i, config, None, opts, scen.initial_leader) for i in config.nodes]
    opts = PBFTOptions(batch_max_bytes=scen.batch_max_bytes, batch_timeout_ms=scen.batch_timeout_ms)
    return [PBFTReplica(i, config, None, opts, scen.initial_leader) for i in config.nodes]


def build_world(scen: Scenario) -> Tuple[World, ClusterConfig]:
    config = scen.cluster()
    network = NetworkConditions(
        jitter_ms=scen.jitter_ms,
        gst_ms=scen.gst_ms,
        pre_gst_delay_max_ms=scen.pre_gst_delay_max_ms,
    )
    world = World(build_replicas(scen, config), scen.latency_matrix(), scen.seed, network)
    world.trace.append(header_record(run_config(scen, config)))
    scen.faults.install(world)
    return world, config


class ClientDriver:
    """Injects requests at the current leader and retries those not yet committed.

    The driver locates the leader with an oracle lookup on the world. A real
    client would follow NotLeader redirects; the oracle keeps runs short
    without changing what the replicas see.
    """

    def __init__(self, world: World, scen: Scenario, honest: List[int]):
        self.world = world
        self.scen = scen
        self.honest = honest
        self.requests = generate_workload(scen.workload, scen.seed)
        self.total = len(self.requests)
        self.outstanding: Dict[int, Tuple[Request, float]] = {}
        self.injected = 0
        self.receipt: Dict[Tuple[int, int], float] = {}
        self.leader_latency: Dict[int, float] = {}
        self.first_receipt: Dict[int, float] = {}
        self.commit_time: Dict[int, Dict[int, float]] = {i: {} for i in honest}
        self.done_at: Optional[float] = None
        self.last_leader = scen.initial_leader if scen.initial_leader is not None else 0
        world.commit_listeners.append(self._on_commit)
        world.request_listeners.append(self._on_receipt)
        for t, req in self.requests:
            world.schedule_call(t, lambda now, r=req: self._submit(r, now))
        if self.total:
            world.schedule_call(scen.workload.start_ms + scen.workload.retry_ms, self._tick)
        else:
            self.done_at = 0.0

    def _target(self) -> int:
        leader = self.world.current_leader()
        if leader is not None:
            self.last_leader = leader
        return self.last_leader

    def _submit(self, req: Request, now: float) -> None:
        self.injected += 1
        self.outstanding[req.request_id] = (req, now)
        self.world.schedule_client_request(now, self._target(), req)

    def _tick(self, now: float) -> None:
        self._check_done(now)
        if self.done_at is not None:
            return
        retry = self.scen.workload.retry_ms
        target = self._target()
        for rid, (req, sent) in list(self.outstanding.items()):
            if now - sent >= retry:
                self.outstanding[rid] = (req, now)
                self.world.schedule_client_request(now, target, req)
        self.world.schedule_call(now + retry, self._tick)

    def _on_receipt(self, node: int, req: Request, now: float) -> None:
        self.receipt.setdefault((node, req.request_id), now)
        self.first_receipt.setdefault(req.request_id, now)

    def _on_commit(self, node: int, entries, now: float) -> None:
        times = self.commit_time.get(node)
        if times is None:
            return
        is_leader = self.world.replicas[node].is_leader
        for e in entries:
            for rid in e.request_ids:
                times.setdefault(rid, now)
                self.outstanding.pop(rid, None)
                if is_leader and rid not in self.leader_latency:
                    got = self.receipt.get((node, rid))
                    if got is not None:
                        self.leader_latency[rid] = now - got
        self._check_done(now)

    def _check_done(self, now: float) -> None:
        if self.done_at is not None or self.injected < self.total:
            return
        alive = [i for i in self.honest if i not in self.world.crashed]
        if alive and all(len(self.commit_time[i]) >= self.total for i in alive):
            self.done_at = now

    def all_replica_latencies(self) -> List[float]:
        alive = [i for i in self.honest if i not in self.world.crashed]
        out = []
        for rid, start in self.first_receipt.items():
            ts = [self.commit_time[i].get(rid) for i in alive]
            if ts and all(t is not None for t in ts):
                out.append(max(ts) - start)
        return out


def _leader_history(world: World, config: ClusterConfig) -> List[dict]:
    out = []
    for t, kind, src, _dst, term, _i, _d, note in world.trace:
        if kind == "role" and note == "leader":
            out.append({"term": term, "node": src, "tee": config.tee[src], "t": t})
    return out


def _leader_recovery(world: World, gst: float) -> List[dict]:
    """For each crash of a sitting leader: first commit by a leader of a later term."""
    leading: Dict[int, int] = {}
    waiting: List[dict] = []
    for t, kind, src, _dst, term, index, _d, note in world.trace:
        if kind == "role":
            if note == "leader":
                leading[src] = term
            else:
                leading.pop(src, None)
        elif kind == "crash" and src in leading:
            waiting.append({"crashed_leader": src, "term": leading.pop(src), "crash_t": t,
                            "new_leader": None, "first_commit_t": None, "recovery_ms": None})
        elif kind == "commit" and src in leading:
            for w in waiting:
                if w["new_leader"] is None and leading[src] > w["term"]:
                    w.update(new_leader=src, first_commit_t=t, recovery_ms=t - max(w["crash_t"], gst))
    return waiting


def run_scenario(scen: Scenario, trace_path: Optional[str] = None) -> MetricsReport:
    world, config = build_world(scen)
    honest = [i for i in config.nodes if i not in set(scen.faults.byzantine)]
    driver = ClientDriver(world, scen, honest)
    drain = scen.drain_ms

    def finished(w: World) -> bool:
        return scen.stop_when_done and driver.done_at is not None and w.clock >= driver.done_at + drain

    world.run(until=scen.run_ms, stop=finished)

    violations = [v.to_json() for v in check_trace(world.trace)]
    # batches: the longest committed prefix among honest nodes
    batches = max((world.replicas[i].log.last_commit_index for i in honest), default=0)
    committed_requests = max((len(driver.commit_time[i]) for i in honest), default=0)
    replication = world.sent_by_category.get(REPLICATION, 0)
    commit_times = [t for i in honest for t in driver.commit_time[i].values()]
    first = min(driver.first_receipt.values(), default=0.0)
    span = (max(commit_times) - first) if commit_times else 0.0
    history = _leader_history(world, config)
    elections = sum(1 for h in history if not (h["term"] <= 1 and h["node"] == scen.initial_leader))
    evidence = sum(1 for rec in world.trace if rec[1] == "evidence")
    digest = world.trace_digest()
    if trace_path:
        write_trace(world, trace_path)
    return MetricsReport(
        scenario=scen.to_json(),
        seed=scen.seed,
        protocol=scen.protocol,
        n=config.n,
        f=config.f,
        committed_batches=batches,
        committed_requests=committed_requests,
        commit_latency_ms=LatencyStats.of(list(driver.leader_latency.values())),
        all_replica_latency_ms=LatencyStats.of(driver.all_replica_latencies()),
        throughput_rps=(committed_requests / (span / 1000.0)) if span > 0 else 0.0,
        messages_total=sum(world.sent_by_category.values()),
        messages_per_commit=(replication / batches) if batches else None,
        messages_by_category=dict(sorted(world.sent_by_category.items())),
        messages_by_type=dict(sorted(world.sent_by_type.items())),
        elections=elections,
        leader_history=history,
        leader_recovery=_leader_recovery(world, scen.gst_ms),
        evidence=evidence,
        sim_time_ms=world.clock,
        trace_digest=digest,
        violations=violations,
    )


def write_trace(world: World, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in world.trace_lines():
            fh.write(line)
            fh.write("\n")
