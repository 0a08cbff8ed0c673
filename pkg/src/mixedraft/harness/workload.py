"""Client workload: ``(id, payload)`` requests with deterministic arrival times."""

from __future__ import annotations

import hashlib
import random
from typing import List, Tuple

from ..core import Request
from .scenario import Workload


def request_payload(request_id: int) -> bytes:
    """Default payload: the SHA-256 checksum of the decimal id."""
    return hashlib.sha256(str(request_id).encode()).digest()


def generate_workload(spec: Workload, seed: int) -> List[Tuple[float, Request]]:
    """Requests ``1..count`` with their arrival times in simulated ms."""
    if spec.count < 0:
        raise ValueError("workload count must be >= 0")
    if spec.payload == "digest":
        make = request_payload
    else:
        size = spec.payload["random_bytes"]
        rng = random.Random(f"workload/{seed}")
        make = lambda _rid: rng.randbytes(size)  # noqa: E731
    return [
        (spec.start_ms + (rid - 1) * spec.interval_ms, Request(rid, make(rid)))
        for rid in range(1, spec.count + 1)
    ]
