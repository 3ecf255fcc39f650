"""Shared fixtures and independent oracles for the test suite.

The oracles here deliberately avoid the library's fast paths: the event-order
explorer re-derives work-conserving semantics by brute force, and the path
enumerator recomputes levels from every explicit path.
"""

from __future__ import annotations

import sys

import numpy as np

from flowplace.cluster import ClusterSpec
from flowplace.graph import DataflowGraph, MetaOp, OpKind, Vertex


def chain_graph(flops=(1000, 1000, 1000), bytes_=64) -> DataflowGraph:
    """0 (input) -> 1 -> 2 -> ... with the given per-vertex flops."""
    vs = [Vertex(0, OpKind.INPUT, 0, bytes_, "x")]
    es = []
    for i, f in enumerate(flops, start=1):
        vs.append(Vertex(i, OpKind.OTHER, f, bytes_, f"op{i}"))
        es.append((i - 1, i))
    return DataflowGraph(tuple(vs), tuple(es))


def fixture6() -> DataflowGraph:
    """Training fixture: input feeding two heavy parallel branches that
    rejoin: 0 -> {1,2}, 1 -> 3, 2 -> 4, {3,4} -> 5."""
    return DataflowGraph(
        (Vertex(0, OpKind.INPUT, 0, 64, "x"),
         Vertex(1, OpKind.MATMUL, 4000, 64, "m1"),
         Vertex(2, OpKind.MATMUL, 4000, 64, "m2"),
         Vertex(3, OpKind.OTHER, 1000, 64, "p1"),
         Vertex(4, OpKind.OTHER, 1000, 64, "p2"),
         Vertex(5, OpKind.REDUCTION, 500, 64, "r")),
        ((0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 5)),
    )


def chain4() -> DataflowGraph:
    """Imitation fixture: 4-vertex serial chain."""
    return chain_graph((1000, 1000, 1000))


def fig2_unit() -> DataflowGraph:
    """One sharded matrix multiply with unit costs: 8 block inputs, 8 unit
    submatrix multiplies, 4 unit partial-sum adds, all output bytes 1."""
    vs, es = [], []
    for k in range(8):
        vs.append(Vertex(k, OpKind.INPUT, 0, 1, f"in{k}"))
    mm = []
    for i in range(2):
        for j in range(2):
            for k in range(2):
                vid = len(vs)
                vs.append(Vertex(vid, OpKind.MATMUL, 1, 1, f"p[{i},{j},{k}]"))
                es.append((2 * i + k, vid))
                es.append((4 + 2 * k + j, vid))
                mm.append(vid)
    adds = []
    for b in range(4):
        vid = len(vs)
        vs.append(Vertex(vid, OpKind.ADD, 1, 1, f"s[{b}]"))
        es.append((mm[2 * b], vid))
        es.append((mm[2 * b + 1], vid))
        adds.append(vid)
    return DataflowGraph(tuple(vs), tuple(es),
                         (MetaOp(0, tuple(mm), tuple(adds)),))


def cluster2(rate=1000.0, bandwidth=256.0, **kw) -> ClusterSpec:
    return ClusterSpec.uniform(2, rate=rate, bandwidth=bandwidth, **kw)


def random_dag(rng: np.random.Generator, max_vertices: int = 8,
               edge_prob: float = 0.45) -> DataflowGraph:
    """Random valid DAG: vertex 0 is always an entry input; later vertices
    keep input kind when no edge lands on them."""
    n = int(rng.integers(2, max_vertices + 1))
    edges = []
    has_pred = [False] * n
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < edge_prob:
                edges.append((u, v))
                has_pred[v] = True
    vs = []
    for v in range(n):
        if has_pred[v]:
            flops = int(rng.integers(100, 5000))
            kind = OpKind.OTHER
        else:
            flops, kind = 0, OpKind.INPUT
        vs.append(Vertex(v, kind, flops, int(rng.integers(16, 256)), f"v{v}"))
    return DataflowGraph(tuple(vs), tuple(edges))


def explore_makespans(graph: DataflowGraph, assignment, cluster: ClusterSpec,
                      cap: int = 3_000_000) -> tuple[float, float]:
    """(min, max) makespan over every possible work-conserving event order.

    Branches over each choice of next task to start; when nothing is
    startable, all earliest completions are processed at once. Memoized on
    the relative-time state.
    """
    sys.setrecursionlimit(100000)
    n, d = len(graph), cluster.device_count
    assign = list(assignment)
    preds = [graph.preds(v) for v in range(n)]
    entry = [graph.is_entry(v) for v in range(n)]
    cons = [tuple(sorted({assign[w] for w in graph.succs(v)})) for v in range(n)]
    memo: dict = {}
    nodes = [0]

    def dfs(rdy: int, begun: frozenset, inflight: tuple):
        key = (rdy, begun, inflight)
        if key in memo:
            return memo[key]
        nodes[0] += 1
        if nodes[0] > cap:
            raise RuntimeError("explorer cap exceeded")
        if all(entry[v] or ((rdy >> (v * d + assign[v])) & 1) for v in range(n)):
            memo[key] = (0.0, 0.0)
            return memo[key]
        eu: dict = {}
        tu: dict = {}
        for rel, kind, v, a, b in inflight:
            if kind == "e":
                eu[a] = eu.get(a, 0) + 1
            else:
                tu[(a, b)] = tu.get((a, b), 0) + 1
        opts = []
        for v in range(n):
            if not cons[v] or not ((rdy >> (v * d + assign[v])) & 1):
                continue
            for dst in cons[v]:
                if (rdy >> (v * d + dst)) & 1 or ("t", v, dst) in begun:
                    continue
                if tu.get((assign[v], dst), 0) >= cluster.transfer_slots[assign[v]][dst]:
                    continue
                opts.append(("t", v, dst))
        for v in range(n):
            if entry[v] or ("e", v) in begun:
                continue
            if eu.get(assign[v], 0) >= cluster.exec_slots[assign[v]]:
                continue
            if all((rdy >> (u * d + assign[v])) & 1 for u in preds[v]):
                opts.append(("e", v))
        if opts:
            lo = hi = None
            for o in opts:
                if o[0] == "e":
                    v = o[1]
                    dur = graph.vertices[v].flops / cluster.rates[assign[v]]
                    rec = (dur, "e", v, assign[v], -1)
                else:
                    v, dst = o[1], o[2]
                    dur = (graph.vertices[v].output_bytes * cluster.comm_factor
                           / cluster.bandwidth[assign[v]][dst])
                    rec = (dur, "t", v, assign[v], dst)
                r = dfs(rdy, begun | frozenset([o]), tuple(sorted(inflight + (rec,))))
                lo = r[0] if lo is None or r[0] < lo else lo
                hi = r[1] if hi is None or r[1] > hi else hi
            memo[key] = (lo, hi)
            return memo[key]
        if not inflight:
            raise RuntimeError("explorer deadlock")
        tmin = min(r for r, *_ in inflight)
        new_rdy, keep = rdy, []
        for rel, kind, v, a, b in inflight:
            if rel == tmin:
                new_rdy |= 1 << (v * d + (a if kind == "e" else b))
            else:
                keep.append((rel - tmin, kind, v, a, b))
        r = dfs(new_rdy, begun, tuple(sorted(keep)))
        memo[key] = (tmin + r[0], tmin + r[1])
        return memo[key]

    rdy0 = 0
    for v in range(n):
        if entry[v]:
            for dd in range(d):
                rdy0 |= 1 << (v * d + dd)
    lo, hi = dfs(rdy0, frozenset(), ())
    return lo, hi


def enumerate_paths_to_exits(graph: DataflowGraph, v: int) -> list[list[int]]:
    if graph.is_exit(v):
        return [[v]]
    return [[v] + rest for w in graph.succs(v)
            for rest in enumerate_paths_to_exits(graph, w)]


def enumerate_paths_to_entries(graph: DataflowGraph, v: int) -> list[list[int]]:
    if graph.is_entry(v):
        return [[v]]
    return [[v] + rest for u in graph.preds(v)
            for rest in enumerate_paths_to_entries(graph, u)]


def path_cost_toward_exits(graph: DataflowGraph, path: list[int],
                           comm_factor: float) -> float:
    cost = sum(graph.vertices[v].flops for v in path)
    for u in path[:-1]:
        cost += graph.vertices[u].output_bytes * comm_factor
    return cost


def path_cost_toward_entries(graph: DataflowGraph, path: list[int],
                             comm_factor: float) -> float:
    # path runs v -> ... -> entry; edge (path[i+1], path[i]) carries
    # path[i+1]'s output
    cost = sum(graph.vertices[v].flops for v in path)
    for u in path[1:]:
        cost += graph.vertices[u].output_bytes * comm_factor
    return cost
