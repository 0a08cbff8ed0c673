import json
from dataclasses import dataclass
from typing import Any

import pytest

from mixedraft.core import ClusterConfig
from mixedraft.protocol import Message, Replica
from mixedraft.simnet import TABLE1, LatencyMatrix, NetworkConditions, Partition, World, region_of


@dataclass(frozen=True)
class Ping(Message):
    seq: int
    sig: Any = None

    def trace_fields(self):
        return (0, self.seq, "")


class Pinger(Replica):
    """Node 0 sends ``count`` pings to everyone at start; others record arrivals."""

    def __init__(self, node_id, config, count=0, timer_ms=None):
        super().__init__(node_id, config, None)
        self.count = count
        self.timer_ms = timer_ms
        self.got = []
        self.fired = []

    def sign(self, msg):
        return msg

    def _on_start(self, now):
        for s in range(self.count):
            self.broadcast(Ping(s))
        if self.timer_ms:
            self._fx.set_timer("tick", *self.timer_ms)

    def _on_message(self, src, msg, now):
        self.got.append((now, src, msg.seq))

    def _on_timer(self, name, now):
        self.fired.append(now)


def _world(n=5, count=3, seed=0, latency=None, network=None, timer_ms=None):
    cfg = ClusterConfig(n=n, f=1, q_rep=3, q_elec=4, tee=(True,) * n)
    reps = [Pinger(i, cfg, count if i == 0 else 0, timer_ms) for i in range(n)]
    return World(reps, latency or LatencyMatrix.table1(n), seed, network)


def test_table1_is_symmetric_with_five_regions():
    for i in range(5):
        for j in range(5):
            assert TABLE1[i][j] == TABLE1[j][i]
    assert region_of(0) == "East US" and region_of(4) == "Southeast Asia" and region_of(5) == "East US"


def test_table1_semantics():
    rtt = LatencyMatrix.table1(5)
    one_way = LatencyMatrix.table1(5, "one_way")
    assert one_way(0, 4) == 219.86
    assert rtt(0, 4) == pytest.approx(109.93)
    assert rtt(2, 2) == 0.0
    assert LatencyMatrix.table1(11)(5, 9) == rtt(0, 4)


def test_latency_matrix_validation():
    with pytest.raises(ValueError):
        LatencyMatrix([[0, 1], [1]])
    with pytest.raises(ValueError):
        LatencyMatrix([[0, -1], [1, 0]])


def test_delivery_time_without_jitter():
    w = _world(count=1, network=NetworkConditions(jitter_ms=0.0)).run()
    arrivals = {r.id: r.got[0][0] for r in w.replicas[1:]}
    assert arrivals == {1: 27.89 / 2, 2: 75.34 / 2, 3: 82.82 / 2, 4: 219.86 / 2}


def test_links_are_fifo_under_jitter():
    w = _world(count=50, network=NetworkConditions(jitter_ms=30.0)).run()
    for r in w.replicas[1:]:
        assert [s for _, _, s in r.got] == list(range(50))


def test_same_seed_same_trace_different_seed_differs():
    a = _world(count=20, seed=7, timer_ms=(10, 50)).run()
    b = _world(count=20, seed=7, timer_ms=(10, 50)).run()
    c = _world(count=20, seed=8, timer_ms=(10, 50)).run()
    assert a.trace_digest() == b.trace_digest()
    assert a.trace_digest() != c.trace_digest()


def test_partition_drops_and_heals():
    p = Partition(group={0}, start=0.0, end=100.0)
    assert p.separates(0, 1, 50) and not p.separates(0, 1, 100) and not p.separates(1, 2, 50)
    directed = Partition(group={0}, other={1}, start=0.0)
    assert directed.separates(1, 0, 5) and not directed.separates(0, 2, 5)
    w = _world(count=1, network=NetworkConditions(partitions=[Partition({4}, 0.0)])).run()
    assert w.replicas[4].got == []
    assert any(rec[1] == "drop" and rec[3] == 4 for rec in w.trace)


def test_crashed_nodes_receive_nothing():
    w = _world(count=1)
    w.crash(3)
    w.run()
    assert w.replicas[3].got == []
    assert any(rec[1] == "crash" and rec[2] == 3 for rec in w.trace)


def test_timers_fire_in_interval_and_cancel():
    w = _world(count=0, timer_ms=(10, 20)).run()
    for r in w.replicas:
        assert len(r.fired) == 1 and 10 <= r.fired[0] < 20
    w2 = _world(count=0, timer_ms=(10, 20))
    w2.start()
    w2.cancel_timer(0, "tick")
    w2.run()
    assert w2.replicas[0].fired == [] and w2.replicas[1].fired


def test_run_until_stops_clock():
    w = _world(count=1).run(until=20.0)
    assert w.clock == 20.0
    assert w.replicas[1].got and not w.replicas[2].got


def test_trace_records_have_all_fields():
    w = _world(count=1).run()
    rec = json.loads(next(iter(w.trace_lines())))
    assert list(rec) == ["t", "kind", "from", "to", "term", "index", "digest", "note"]
    assert w.sent_by_type == {"Ping": 4}
