"""Cluster cost model: device rates, link bandwidths, slots, jitter.

Rates are FLOPs per millisecond, bandwidths bytes per millisecond per ordered
device pair. Each device has a number of concurrent exec slots and each
ordered pair a number of concurrent transfer slots (both default 1: a single
open stream / communication channel per resource).

Jitter multiplies a task duration by exp(sigma * z) with z standard normal.
The factor is a pure function of (seed, task identity) computed with a
splitmix64-style hash, so durations are order-independent and repeated calls
with the same seed are bit-identical. The Cython simulator core replicates
the same arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_NEG_53 = 2.0 ** -53

TASK_EXEC = 0
TASK_TRANSFER = 1


def mix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def jitter_factor(seed: int, kind: int, a: int, b: int, c: int, sigma: float) -> float:
    """Lognormal factor exp(sigma * z) keyed by task identity."""
    if sigma <= 0.0:
        return 1.0
    h = mix64((seed & _MASK) ^ 0xD1B54A32D192ED03)
    h = mix64(h ^ ((kind + 1) & _MASK))
    h = mix64(h ^ ((a + 1) & _MASK))
    h = mix64(h ^ ((b + 2) & _MASK))
    h = mix64(h ^ ((c + 2) & _MASK))
    u1 = ((h >> 11) + 0.5) * _TWO_NEG_53
    h2 = mix64(h)
    u2 = ((h2 >> 11) + 0.5) * _TWO_NEG_53
    z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
    return math.exp(sigma * z)


@dataclass
class ClusterSpec:
    device_count: int
    rates: tuple[float, ...]                      # FLOPs per ms, per device
    bandwidth: tuple[tuple[float, ...], ...]      # bytes per ms, [src][dst]
    exec_slots: tuple[int, ...] = ()
    transfer_slots: tuple[tuple[int, ...], ...] = ()
    comm_factor: float = 4.0
    jitter_sigma: float = 0.0                     # 0 disables jitter

    def __post_init__(self):
        d = self.device_count
        if d < 1:
            raise ValueError("device_count must be >= 1")
        self.rates = tuple(float(r) for r in self.rates)
        self.bandwidth = tuple(tuple(float(x) for x in row) for row in self.bandwidth)
        if len(self.rates) != d:
            raise ValueError(f"expected {d} rates, got {len(self.rates)}")
        if len(self.bandwidth) != d or any(len(row) != d for row in self.bandwidth):
            raise ValueError(f"bandwidth must be a {d}x{d} matrix")
        if any(r <= 0 for r in self.rates):
            raise ValueError("rates must be positive")
        for s in range(d):
            for t in range(d):
                if s != t and self.bandwidth[s][t] <= 0:
                    raise ValueError(f"bandwidth[{s}][{t}] must be positive")
        if not self.exec_slots:
            self.exec_slots = (1,) * d
        self.exec_slots = tuple(int(x) for x in self.exec_slots)
        if not self.transfer_slots:
            self.transfer_slots = tuple((1,) * d for _ in range(d))
        self.transfer_slots = tuple(tuple(int(x) for x in row)
                                    for row in self.transfer_slots)
        if any(s < 1 for s in self.exec_slots):
            raise ValueError("exec slots must be >= 1")
        if any(s < 1 for row in self.transfer_slots for s in row):
            raise ValueError("transfer slots must be >= 1")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")

    @classmethod
    def uniform(cls, device_count: int, rate: float = 1.0, bandwidth: float = 1.0,
                exec_slots: int = 1, transfer_slots: int = 1,
                comm_factor: float = 4.0, jitter_sigma: float = 0.0) -> "ClusterSpec":
        d = device_count
        return cls(
            device_count=d,
            rates=(rate,) * d,
            bandwidth=tuple((bandwidth,) * d for _ in range(d)),
            exec_slots=(exec_slots,) * d,
            transfer_slots=tuple((transfer_slots,) * d for _ in range(d)),
            comm_factor=comm_factor,
            jitter_sigma=jitter_sigma,
        )

    def exec_duration(self, flops: float, device: int, seed: int = 0,
                      vertex: int = -1) -> float:
        base = flops / self.rates[device]
        if self.jitter_sigma > 0.0 and vertex >= 0:
            base *= jitter_factor(seed, TASK_EXEC, vertex, device, 0,
                                  self.jitter_sigma)
        return base

    def transfer_duration(self, output_bytes: float, src: int, dst: int,
                          seed: int = 0, vertex: int = -1) -> float:
        if src == dst:
            return 0.0
        base = output_bytes * self.comm_factor / self.bandwidth[src][dst]
        if self.jitter_sigma > 0.0 and vertex >= 0:
            base *= jitter_factor(seed, TASK_TRANSFER, vertex, src, dst,
                                  self.jitter_sigma)
        return base

    def to_dict(self) -> dict:
        return {
            "device_count": self.device_count,
            "rates": list(self.rates),
            "bandwidth": [list(row) for row in self.bandwidth],
            "exec_slots": list(self.exec_slots),
            "transfer_slots": [list(row) for row in self.transfer_slots],
            "comm_factor": self.comm_factor,
            "jitter_sigma": self.jitter_sigma,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterSpec":
        if "device_count" not in doc:
            raise ValueError("cluster config: missing field: device_count")
        d = int(doc["device_count"])
        rates = doc.get("rates", (1.0,) * d)
        bandwidth = doc.get("bandwidth", tuple((1.0,) * d for _ in range(d)))
        return cls(
            device_count=d,
            rates=tuple(rates),
            bandwidth=tuple(tuple(row) for row in bandwidth),
            exec_slots=tuple(doc.get("exec_slots", ())),
            transfer_slots=tuple(tuple(r) for r in doc.get("transfer_slots", ())),
            comm_factor=float(doc.get("comm_factor", 4.0)),
            jitter_sigma=float(doc.get("jitter_sigma", 0.0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ClusterSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
