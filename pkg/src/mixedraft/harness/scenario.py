"""Scenario files: JSON documents describing one simulated run.

Every field has a default. :func:`load_scenario` fills in the defaults and
validates the result; :meth:`Scenario.to_json` echoes the completed scenario
so that reports reproduce themselves. Errors carry a field path, for example
``scenario.faults[1].node: node 4 has a TEE ...``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from ..adversary import FaultSchedule
from ..core import ClusterConfig, ConfigError, derive_params
from ..simnet import LatencyMatrix

SCENARIO_DIR_ENV = "MRAFT_SCENARIO_DIR"
BUNDLED_DIR = Path(__file__).resolve().parent.parent / "scenarios"

PROTOCOLS = ("mraft", "raft", "pbft")


def scenario_dir() -> Path:
    """Directory searched for relative scenario names (env var, else bundled)."""
    env = os.environ.get(SCENARIO_DIR_ENV)
    return Path(env) if env else BUNDLED_DIR


def nodes_for(protocol: str, f: int) -> int:
    return {"mraft": 3 * f + 2, "raft": 2 * f + 1, "pbft": 3 * f + 1}[protocol]


@dataclass(frozen=True)
class Workload:
    count: int = 100
    payload: Union[str, Dict[str, int]] = "digest"
    interval_ms: float = 1.0
    start_ms: float = 0.0
    retry_ms: float = 500.0


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    protocol: str = "mraft"
    n: int = 5
    f: int = 1
    tee: Tuple[bool, ...] = ()
    latency: Any = "table1"
    latency_semantics: str = "rtt"
    jitter_ms: float = 1.0
    gst_ms: float = 0.0
    pre_gst_delay_max_ms: float = 0.0
    tee_timeout_ms: Tuple[float, float] = (150.0, 300.0)
    non_tee_timeout_ms: Tuple[float, float] = (450.0, 600.0)
    batch_max_bytes: int = 20480
    batch_timeout_ms: float = 1.0
    non_tee_leader: str = "cosi"
    vote_rule: str = "term_index"
    q_elec: Optional[int] = None
    initial_leader: Optional[int] = 0
    workload: Workload = Workload()
    faults: FaultSchedule = FaultSchedule()
    seed: int = 1
    run_ms: float = 60000.0
    drain_ms: float = 500.0
    stop_when_done: bool = True

    # -- derived -------------------------------------------------------------------------------
    def cluster(self) -> ClusterConfig:
        if self.protocol == "mraft":
            return ClusterConfig.build(self.n, self.tee, q_elec=self.q_elec)
        from ..baselines import pbft_cluster, raft_cluster

        if self.protocol == "raft":
            return raft_cluster(self.f, self.n)
        return pbft_cluster(self.f)

    def latency_matrix(self) -> LatencyMatrix:
        lat = self.latency
        if lat == "table1":
            return LatencyMatrix.table1(self.n, self.latency_semantics)
        if isinstance(lat, dict):
            return LatencyMatrix.uniform(self.n, float(lat["uniform"]))
        return LatencyMatrix(lat)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def to_json(self) -> dict:
        out = asdict(self)
        out["tee"] = list(self.tee)
        out["tee_timeout_ms"] = list(self.tee_timeout_ms)
        out["non_tee_timeout_ms"] = list(self.non_tee_timeout_ms)
        out["faults"] = self.faults.to_json()
        out["workload"] = asdict(self.workload)
        if out["run_ms"] == math.inf:
            out["run_ms"] = None
        return out


# -- validation helpers ---------------------------------------------------------------------
def _err(path: str, msg: str) -> ConfigError:
    return ConfigError(f"{path}: {msg}")


def _num(raw: dict, key: str, default: float, path: str, minimum: float = 0.0) -> float:
    v = raw.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v < minimum:
        raise _err(f"{path}.{key}", f"expected a number >= {minimum}, got {v!r}")
    return float(v)


def _int(raw: dict, key: str, default: Optional[int], path: str, minimum: int = 0) -> Optional[int]:
    v = raw.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise _err(f"{path}.{key}", f"expected an integer >= {minimum}, got {v!r}")
    return v


def _choice(raw: dict, key: str, default: str, options: Sequence[str], path: str) -> str:
    v = raw.get(key, default)
    if v not in options:
        raise _err(f"{path}.{key}", f"expected one of {', '.join(options)}, got {v!r}")
    return v


def _interval(raw: dict, key: str, default: Tuple[float, float], path: str) -> Tuple[float, float]:
    v = raw.get(key, list(default))
    if (
        not isinstance(v, (list, tuple))
        or len(v) != 2
        or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
        or not 0 < v[0] <= v[1]
    ):
        raise _err(f"{path}.{key}", f"expected [lo, hi] with 0 < lo <= hi, got {v!r}")
    return (float(v[0]), float(v[1]))


_FIELDS = {
    "name", "protocol", "n", "f", "tee", "latency", "latency_semantics", "jitter_ms", "gst_ms",
    "pre_gst_delay_max_ms", "tee_timeout_ms", "non_tee_timeout_ms", "batch_max_bytes",
    "batch_timeout_ms", "non_tee_leader", "vote_rule", "q_elec", "initial_leader", "workload",
    "faults", "seed", "run_ms", "drain_ms", "stop_when_done", "description",
}


def _size(raw: dict, protocol: str, path: str) -> Tuple[int, int]:
    n, f = raw.get("n"), raw.get("f")
    if n is None and f is None:
        # default: the smallest cluster tolerating one fault
        return nodes_for(protocol, 1), 1
    if f is not None:
        f = _int(raw, "f", None, path, minimum=0)
        if n is not None and n != nodes_for(protocol, f):
            raise _err(f"{path}.n", f"n={n} does not match f={f} for {protocol} "
                                    f"(expected {nodes_for(protocol, f)})")
        return nodes_for(protocol, f), f
    n = _int(raw, "n", None, path, minimum=1)
    if protocol == "mraft":
        try:
            return n, derive_params(n).f
        except ConfigError as exc:
            raise _err(f"{path}.n", str(exc)) from None
    if protocol == "raft":
        # any size works with majority quorums; even sizes just tolerate no more
        if n < 1:
            raise _err(f"{path}.n", f"n={n}: raft needs at least one node")
        return n, (n - 1) // 2
    if (n - 1) % 3 != 0:
        raise _err(f"{path}.n", f"n={n}: n-1 not divisible by 3 (pbft needs n = 3f + 1)")
    return n, (n - 1) // 3


def _latency(raw: dict, n: int, path: str) -> Any:
    lat = raw.get("latency", "table1")
    p = f"{path}.latency"
    if lat == "table1":
        return lat
    if isinstance(lat, dict):
        if set(lat) != {"uniform"}:
            raise _err(p, "expected {\"uniform\": ms}")
        _num(lat, "uniform", 0.0, p)
        return {"uniform": float(lat["uniform"])}
    if isinstance(lat, list):
        if len(lat) != n or any(not isinstance(r, list) or len(r) != n for r in lat):
            raise _err(p, f"explicit matrix must be {n}x{n}")
        for i, r in enumerate(lat):
            for j, v in enumerate(r):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                    raise _err(f"{p}[{i}][{j}]", f"expected a non-negative number, got {v!r}")
        return [[float(v) for v in r] for r in lat]
    raise _err(p, f"expected \"table1\", {{\"uniform\": ms}} or an explicit matrix, got {lat!r}")


def _workload(raw: Any, path: str) -> Workload:
    if raw is None:
        return Workload()
    if not isinstance(raw, dict):
        raise _err(path, "expected an object")
    unknown = sorted(set(raw) - {"count", "payload", "interval_ms", "start_ms", "retry_ms"})
    if unknown:
        raise _err(path, f"unknown field(s) {', '.join(unknown)}")
    payload = raw.get("payload", "digest")
    if payload != "digest":
        if not (isinstance(payload, dict) and set(payload) == {"random_bytes"}):
            raise _err(f"{path}.payload", "expected \"digest\" or {\"random_bytes\": k}")
        _int(payload, "random_bytes", None, f"{path}.payload", minimum=1)
        payload = {"random_bytes": payload["random_bytes"]}
    return Workload(
        count=_int(raw, "count", 100, path),
        payload=payload,
        interval_ms=_num(raw, "interval_ms", 1.0, path),
        start_ms=_num(raw, "start_ms", 0.0, path),
        retry_ms=_num(raw, "retry_ms", 500.0, path, minimum=1.0),
    )


def scenario_from_dict(raw: Any, path: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise _err(path, "expected a JSON object")
    unknown = sorted(set(raw) - _FIELDS)
    if unknown:
        raise _err(path, f"unknown field(s) {', '.join(unknown)}")
    protocol = _choice(raw, "protocol", "mraft", PROTOCOLS, path)
    n, f = _size(raw, protocol, path)

    tee_raw = raw.get("tee")
    if tee_raw is None:
        tee = (protocol == "mraft",) * n
    elif isinstance(tee_raw, list) and all(isinstance(t, bool) for t in tee_raw):
        if len(tee_raw) != n:
            raise _err(f"{path}.tee", f"expected {n} flags, got {len(tee_raw)}")
        tee = tuple(tee_raw)
    else:
        raise _err(f"{path}.tee", "expected a list of booleans")

    initial = raw.get("initial_leader", 0)
    if initial is not None:
        initial = _int(raw, "initial_leader", 0, path)
        if initial >= n:
            raise _err(f"{path}.initial_leader", f"node {initial} outside 0..{n - 1}")
    q_elec = _int(raw, "q_elec", None, path, minimum=1)
    run_ms = raw.get("run_ms", 60000.0)
    run_ms = math.inf if run_ms is None else _num(raw, "run_ms", 60000.0, path)

    scen = Scenario(
        name=str(raw.get("name", "scenario")),
        protocol=protocol,
        n=n,
        f=f,
        tee=tee,
        latency=_latency(raw, n, path),
        latency_semantics=_choice(raw, "latency_semantics", "rtt", ("rtt", "one_way"), path),
        jitter_ms=_num(raw, "jitter_ms", 1.0, path),
        gst_ms=_num(raw, "gst_ms", 0.0, path),
        pre_gst_delay_max_ms=_num(raw, "pre_gst_delay_max_ms", 0.0, path),
        tee_timeout_ms=_interval(raw, "tee_timeout_ms", (150.0, 300.0), path),
        non_tee_timeout_ms=_interval(raw, "non_tee_timeout_ms", (450.0, 600.0), path),
        batch_max_bytes=_int(raw, "batch_max_bytes", 20480, path, minimum=1),
        batch_timeout_ms=_num(raw, "batch_timeout_ms", 1.0, path),
        non_tee_leader=_choice(raw, "non_tee_leader", "cosi", ("cosi", "idle_wait"), path),
        vote_rule=_choice(raw, "vote_rule", "term_index", ("term_index", "index_only"), path),
        q_elec=q_elec,
        initial_leader=initial,
        workload=_workload(raw.get("workload"), f"{path}.workload"),
        seed=_int(raw, "seed", 1, path),
        run_ms=run_ms,
        drain_ms=_num(raw, "drain_ms", 500.0, path),
        stop_when_done=bool(raw.get("stop_when_done", True)),
    )
    try:
        config = scen.cluster()
    except ConfigError as exc:
        field_name = "q_elec" if "quorum" in str(exc) else "tee"
        raise _err(f"{path}.{field_name}", str(exc)) from None
    faults = FaultSchedule.from_json(raw.get("faults"), config, f"{path}.faults")
    return replace(scen, faults=faults)


def resolve_path(path: Union[str, Path]) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    candidate = scenario_dir() / p
    if candidate.exists():
        return candidate
    if candidate.suffix != ".json" and candidate.with_suffix(".json").exists():
        return candidate.with_suffix(".json")
    return p


def load_scenario(path: Union[str, Path]) -> Scenario:
    p = resolve_path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: scenario file not found (also looked in {scenario_dir()})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return scenario_from_dict(raw)
