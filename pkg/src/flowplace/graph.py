"""Dataflow graph model: vertices, edges, meta-op grouping, validation, JSON I/O.

A graph is a DAG of tensor operations. Vertices carry a FLOP count and the
byte size of their output tensor; edges carry no data of their own (the
communication cost of an edge is derived from the producer's output bytes).
Sharding builders additionally group vertices into meta-ops: the expensive
parallel fragments (shard_ops) and their aggregators (reduce_ops) descended
from one original operation.

Graphs are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class OpKind(str, Enum):
    INPUT = "input"
    MATMUL = "matmul"
    ADD = "add"
    ELEMWISE = "elemwise"
    REDUCTION = "reduction"
    FORMATION = "formation"
    OTHER = "other"


class GraphFormatError(ValueError):
    """Raised when graph JSON does not match the schema; names the bad field."""


class GraphValidationError(ValueError):
    """Raised when a structurally parseable graph violates invariants."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass(frozen=True)
class Vertex:
    id: int
    op_kind: OpKind
    flops: int
    output_bytes: int
    label: str = ""


@dataclass(frozen=True)
class MetaOp:
    id: int
    shard_ops: tuple[int, ...]
    reduce_ops: tuple[int, ...] = ()

    def members(self) -> tuple[int, ...]:
        return self.shard_ops + self.reduce_ops


@dataclass
class DataflowGraph:
    vertices: tuple[Vertex, ...]
    edges: tuple[tuple[int, int], ...]
    meta_ops: tuple[MetaOp, ...] = ()
    _preds: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    _succs: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = tuple(self.vertices)
        self.edges = tuple((int(u), int(v)) for u, v in self.edges)
        self.meta_ops = tuple(self.meta_ops)
        n = len(self.vertices)
        preds: list[list[int]] = [[] for _ in range(n)]
        succs: list[list[int]] = [[] for _ in range(n)]
        for u, v in self.edges:
            if 0 <= u < n and 0 <= v < n:
                succs[u].append(v)
                preds[v].append(u)
        self._preds = tuple(tuple(sorted(p)) for p in preds)
        self._succs = tuple(tuple(sorted(s)) for s in succs)

    def __len__(self) -> int:
        return len(self.vertices)

    def preds(self, v: int) -> tuple[int, ...]:
        return self._preds[v]

    def succs(self, v: int) -> tuple[int, ...]:
        return self._succs[v]

    def is_entry(self, v: int) -> bool:
        return not self._preds[v]

    def is_exit(self, v: int) -> bool:
        return not self._succs[v]

    def entry_vertices(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.vertices if self.is_entry(v.id))

    def exit_vertices(self) -> tuple[int, ...]:
        return tuple(v.id for v in self.vertices if self.is_exit(v.id))

    def meta_of(self) -> dict[int, int]:
        """Vertex id -> position of its meta-op in self.meta_ops."""
        out: dict[int, int] = {}
        for pos, m in enumerate(self.meta_ops):
            for v in m.members():
                out[v] = pos
        return out


def validate(graph: DataflowGraph) -> list[str]:
    """Check every graph invariant; returns one message per violation.

    Violations are data, not failures: an empty list means the graph is valid.
    """
    out: list[str] = []
    n = len(graph.vertices)
    if n == 0:
        out.append("empty-graph: no vertices")
        return out

    for i, v in enumerate(graph.vertices):
        if v.id != i:
            out.append(f"non-dense-ids: vertex at position {i} has id {v.id}")
        if v.flops < 0:
            out.append(f"negative-flops: vertex {v.id}")
        if v.output_bytes < 0:
            out.append(f"negative-bytes: vertex {v.id}")
        if (v.flops == 0) != (v.op_kind == OpKind.INPUT):
            out.append(
                f"flops-kind-mismatch: vertex {v.id} has flops={v.flops} "
                f"but op_kind={v.op_kind.value}"
            )

    seen: set[tuple[int, int]] = set()
    for u, v in graph.edges:
        if not (0 <= u < n and 0 <= v < n):
            out.append(f"edge-out-of-range: ({u}, {v})")
            continue
        if (u, v) in seen:
            out.append(f"duplicate-edge: ({u}, {v})")
        seen.add((u, v))
        if u == v:
            out.append(f"cycle: self-loop at vertex {u}")

    for u, v in seen:
        if u != v and graph.vertices[u].output_bytes == 0:
            out.append(f"zero-bytes-consumed: vertex {u} feeds vertex {v}")

    # Kahn's algorithm; whatever survives is on a cycle.
    indeg = [len(graph.preds(v)) for v in range(n)]
    queue = [v for v in range(n) if indeg[v] == 0]
    removed = 0
    while queue:
        u = queue.pop()
        removed += 1
        for w in graph.succs(u):
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if removed < n:
        member = min(v for v in range(n) if indeg[v] > 0)
        out.append(f"cycle: vertex {member} lies on a cycle")

    if not any(graph.is_entry(v) for v in range(n)):
        out.append("no-entry-vertex: every vertex has a predecessor")
    if not any(graph.is_exit(v) for v in range(n)):
        out.append("no-exit-vertex: every vertex has a successor")

    claimed: dict[int, int] = {}
    for m in graph.meta_ops:
        if set(m.shard_ops) & set(m.reduce_ops):
            out.append(f"meta-op-overlap: meta-op {m.id} shard/reduce share vertices")
        if len(m.reduce_ops) > len(m.shard_ops):
            out.append(f"meta-op-shape: meta-op {m.id} has more reduce_ops than shard_ops")
        for v in m.members():
            if not (0 <= v < n):
                out.append(f"meta-op-out-of-range: meta-op {m.id} names vertex {v}")
            elif v in claimed:
                out.append(f"meta-op-conflict: vertex {v} in meta-ops {claimed[v]} and {m.id}")
            else:
                claimed[v] = m.id
    meta_pos = graph.meta_of()
    for u, v in seen:
        if u in meta_pos and v in meta_pos and meta_pos[u] > meta_pos[v]:
            out.append(
                f"meta-op-order: edge ({u}, {v}) goes from meta-op position "
                f"{meta_pos[u]} back to {meta_pos[v]}"
            )
    return out


def topo_order(graph: DataflowGraph) -> list[int]:
    """Topological order with ties broken by ascending vertex id.

    Raises GraphValidationError naming a cycle member if the graph is cyclic.
    """
    n = len(graph.vertices)
    indeg = [len(graph.preds(v)) for v in range(n)]
    heap = [v for v in range(n) if indeg[v] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for w in graph.succs(u):
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    if len(order) < n:
        member = min(v for v in range(n) if indeg[v] > 0)
        raise GraphValidationError([f"cycle: vertex {member} lies on a cycle"])
    return order


def graph_to_dict(graph: DataflowGraph) -> dict:
    return {
        "vertices": [
            {
                "id": v.id,
                "op_kind": v.op_kind.value,
                "flops": int(v.flops),
                "output_bytes": int(v.output_bytes),
                "label": v.label,
            }
            for v in graph.vertices
        ],
        "edges": [[u, v] for u, v in graph.edges],
        "meta_ops": [
            {
                "id": m.id,
                "shard_ops": list(m.shard_ops),
                "reduce_ops": list(m.reduce_ops),
            }
            for m in graph.meta_ops
        ],
    }


def graph_from_dict(doc: dict) -> DataflowGraph:
    if not isinstance(doc, dict):
        raise GraphFormatError("document: expected a JSON object")
    for key in ("vertices", "edges", "meta_ops"):
        if key not in doc:
            raise GraphFormatError(f"missing field: {key}")
    vertices = []
    for i, rec in enumerate(doc["vertices"]):
        for key in ("id", "op_kind", "flops", "output_bytes", "label"):
            if key not in rec:
                raise GraphFormatError(f"vertices[{i}]: missing field: {key}")
        try:
            kind = OpKind(rec["op_kind"])
        except ValueError:
            raise GraphFormatError(f"vertices[{i}].op_kind: unknown kind {rec['op_kind']!r}")
        vertices.append(
            Vertex(
                id=int(rec["id"]),
                op_kind=kind,
                flops=int(rec["flops"]),
                output_bytes=int(rec["output_bytes"]),
                label=str(rec["label"]),
            )
        )
    edges = []
    for i, pair in enumerate(doc["edges"]):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise GraphFormatError(f"edges[{i}]: expected [src, dst]")
        edges.append((int(pair[0]), int(pair[1])))
    metas = []
    for i, rec in enumerate(doc["meta_ops"]):
        for key in ("id", "shard_ops", "reduce_ops"):
            if key not in rec:
                raise GraphFormatError(f"meta_ops[{i}]: missing field: {key}")
        metas.append(
            MetaOp(
                id=int(rec["id"]),
                shard_ops=tuple(int(v) for v in rec["shard_ops"]),
                reduce_ops=tuple(int(v) for v in rec["reduce_ops"]),
            )
        )
    graph = DataflowGraph(tuple(vertices), tuple(edges), tuple(metas))
    violations = validate(graph)
    if violations:
        raise GraphValidationError(violations)
    return graph


def save_json(graph: DataflowGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph), indent=2) + "\n")


def load_json(path: str | Path) -> DataflowGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphFormatError(f"document: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)
