"""Non-learned assignment engines.

critical_path_assign: randomized list scheduling, best of N simulated trials.
enumerative_optimizer: per-meta-op exhaustive device enumeration minimizing
input transfer cost, shard ops on distinct devices.
random_assign / single_device_assign: baselines.
brute_force_optimal: exhaustive oracle over all assignments (capped).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cluster import ClusterSpec
from .features import StaticGraphFeatures, static_features
from .graph import DataflowGraph
from .simulate import exec_time
from .timeline import PlacementTimeline


class BruteForceCapError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    device_of: tuple[int, ...]
    engine: str = ""

    def __getitem__(self, v: int) -> int:
        return self.device_of[v]

    def __iter__(self):
        return iter(self.device_of)

    def __len__(self) -> int:
        return len(self.device_of)


def validate_assignment(graph: DataflowGraph, assignment, device_count: int) -> list[str]:
    out = []
    devices = list(assignment)
    if len(devices) != len(graph):
        out.append(f"not-total: {len(devices)} entries for {len(graph)} vertices")
        return out
    for v, d in enumerate(devices):
        if not (0 <= d < device_count):
            out.append(f"bad-device: vertex {v} on device {d} of {device_count}")
    return out


def single_device_assign(graph: DataflowGraph) -> Assignment:
    return Assignment((0,) * len(graph), "single")


def random_assign(graph: DataflowGraph, devices: int, seed: int = 0) -> Assignment:
    rng = np.random.default_rng(seed)
    return Assignment(tuple(int(d) for d in rng.integers(0, devices, size=len(graph))),
                      "random")


class CriticalPathRule:
    """Deterministic select/place rule: pick the candidate with the largest
    t-level (ties: smallest id), place it on the earliest-start device
    (ties: smallest device id). Doubles as the imitation teacher."""

    def __init__(self, graph: DataflowGraph, cluster: ClusterSpec,
                 features: StaticGraphFeatures):
        self.graph = graph
        self.cluster = cluster
        self.features = features

    def select(self, candidates: list[int],
               rng: np.random.Generator | None = None) -> int:
        tlev = self.features.t_level
        best = max(tlev[v] for v in candidates)
        top = [v for v in candidates if tlev[v] == best]
        if rng is None or len(top) == 1:
            return top[0]
        return top[int(rng.integers(len(top)))]

    def place(self, v: int, timeline: PlacementTimeline) -> int:
        best_d, best_t = 0, None
        for d in range(self.cluster.device_count):
            t = timeline.earliest_start(v, d)
            if best_t is None or t < best_t:
                best_d, best_t = d, t
        return best_d


def critical_path_assign(graph: DataflowGraph, cluster: ClusterSpec,
                         trials: int = 50, seed: int = 0,
                         strategy: str = "fifo",
                         features: StaticGraphFeatures | None = None) -> Assignment:
    """List scheduling with randomized selection tie-breaks; returns the
    trial assignment with the smallest simulated makespan."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if features is None:
        features = static_features(graph, cluster.comm_factor)
    rule = CriticalPathRule(graph, cluster, features)
    n = len(graph)
    best: Assignment | None = None
    best_mk = None
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        timeline = PlacementTimeline(graph, cluster)
        candidates = sorted(graph.entry_vertices())
        assigned = [False] * n
        n_preds_left = [len(graph.preds(v)) for v in range(n)]
        devices = [0] * n
        for _ in range(n):
            v = rule.select(candidates, rng)
            d = rule.place(v, timeline)
            timeline.commit(v, d)
            devices[v] = d
            assigned[v] = True
            candidates.remove(v)
            for w in graph.succs(v):
                n_preds_left[w] -= 1
                if n_preds_left[w] == 0:
                    candidates.append(w)
            candidates.sort()
        mk, _ = exec_time(graph, devices, cluster, strategy, seed=0,
                          features=features)
        if best_mk is None or mk < best_mk:
            best, best_mk = Assignment(tuple(devices), "critical_path"), mk
    return best


def _network_cost(graph: DataflowGraph, cluster: ClusterSpec,
                  placed: list[int], u: int, dst: int) -> float:
    if graph.is_entry(u):
        return 0.0
    src = placed[u]
    if src < 0:
        raise ValueError(f"meta-op input {u} is not assigned yet")
    return cluster.transfer_duration(graph.vertices[u].output_bytes, src, dst)


def enumerative_optimizer(graph: DataflowGraph, cluster: ClusterSpec) -> Assignment:
    """Meta-op by meta-op exhaustive placement minimizing input transfer time.

    For each group (shard ops first, then reduce ops) every injective
    assignment of the group onto distinct devices is costed by the summed
    transfer time of the group's inputs; the cheapest is committed. No two
    shard ops of one meta-op ever share a device.
    """
    if not graph.meta_ops:
        raise ValueError("enumerative optimizer requires a graph with meta-ops")
    d = cluster.device_count
    placed = [-1] * len(graph)
    for m in graph.meta_ops:
        for group in (m.shard_ops, m.reduce_ops):
            if not group:
                continue
            if len(group) > d:
                raise ValueError(
                    f"meta-op {m.id} places {len(group)} ops on {d} devices")
            best_cost, best_perm = None, None
            for perm in itertools.permutations(range(d), len(group)):
                cost = 0.0
                for v, dev in zip(group, perm):
                    for u in graph.preds(v):
                        cost += _network_cost(graph, cluster, placed, u, dev)
                if best_cost is None or cost < best_cost:
                    best_cost, best_perm = cost, perm
            for v, dev in zip(group, best_perm):
                placed[v] = dev
    # Vertices outside every meta-op (the inputs) go with their first
    # consumer for locality; placement of inputs never affects makespan.
    for v in range(len(graph)):
        if placed[v] >= 0:
            continue
        succ_devs = [placed[w] for w in graph.succs(v) if placed[w] >= 0]
        placed[v] = succ_devs[0] if succ_devs else 0
    return Assignment(tuple(placed), "enumopt")


def brute_force_optimal(graph: DataflowGraph, cluster: ClusterSpec,
                        strategy: str = "fifo", cap: int = 1 << 20,
                        features: StaticGraphFeatures | None = None
                        ) -> tuple[Assignment, float]:
    """Exhaustive oracle: simulate every assignment, return the argmin.

    Ties break to the lexicographically smallest assignment. Entry vertices
    are pinned to device 0: inputs are available everywhere, so their
    placement cannot change any simulated makespan, and device 0 is the
    lexicographic minimum among equals.
    """
    n = len(graph)
    d = cluster.device_count
    if d ** n > cap:
        raise BruteForceCapError(
            f"{d}**{n} assignments exceed the cap of {cap}")
    if features is None:
        features = static_features(graph, cluster.comm_factor)
    free = [v for v in range(n) if not graph.is_entry(v)]
    devices = [0] * n
    best: tuple[int, ...] | None = None
    best_mk = None
    for combo in itertools.product(range(d), repeat=len(free)):
        for v, dev in zip(free, combo):
            devices[v] = dev
        mk, _ = exec_time(graph, devices, cluster, strategy, seed=0,
                          features=features)
        if best_mk is None or mk < best_mk:
            best, best_mk = tuple(devices), mk
    return Assignment(best, "brute_force"), best_mk
