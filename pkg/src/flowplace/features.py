"""Static per-vertex features: compute cost, communication sums, b/t levels.

Orientation follows the glossary used throughout: the b-level of a vertex is
the cost of the longest path from it back toward an entry vertex, the t-level
the cost of the longest path toward an exit vertex. Both include the vertex's
own compute cost, so level >= compute_cost always holds.

The communication cost of edge (u, v) is u's output bytes times the
communication factor (default 4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DataflowGraph, topo_order

DEFAULT_COMM_FACTOR = 4.0

# Column indices of the n x 5 feature matrix.
COMPUTE_COST = 0
IN_COMM_SUM = 1
OUT_COMM_SUM = 2
T_LEVEL = 3
B_LEVEL = 4


@dataclass
class StaticGraphFeatures:
    matrix: np.ndarray  # n x 5, float64
    b_paths: tuple[tuple[int, ...], ...]
    t_paths: tuple[tuple[int, ...], ...]
    comm_factor: float

    @property
    def t_level(self) -> np.ndarray:
        return self.matrix[:, T_LEVEL]

    @property
    def b_level(self) -> np.ndarray:
        return self.matrix[:, B_LEVEL]


def edge_comm_cost(graph: DataflowGraph, u: int, comm_factor: float) -> float:
    """Cost of shipping u's output over any edge (u, *)."""
    return graph.vertices[u].output_bytes * comm_factor


def static_features(graph: DataflowGraph,
                    comm_factor: float = DEFAULT_COMM_FACTOR) -> StaticGraphFeatures:
    n = len(graph.vertices)
    order = topo_order(graph)
    mat = np.zeros((n, 5), dtype=np.float64)

    for v in range(n):
        mat[v, COMPUTE_COST] = graph.vertices[v].flops
        mat[v, IN_COMM_SUM] = sum(edge_comm_cost(graph, u, comm_factor)
                                  for u in graph.preds(v))
        mat[v, OUT_COMM_SUM] = (edge_comm_cost(graph, v, comm_factor)
                                * len(graph.succs(v)))

    # t-level: longest path toward exits, reverse topological sweep.
    # Neighbor lists are sorted, so strict improvement keeps the smallest
    # next-vertex id on ties.
    t_next = [-1] * n
    for v in reversed(order):
        best, arg = 0.0, -1
        for w in graph.succs(v):
            cand = edge_comm_cost(graph, v, comm_factor) + mat[w, T_LEVEL]
            if arg == -1 or cand > best:
                best, arg = cand, w
        mat[v, T_LEVEL] = graph.vertices[v].flops + best
        t_next[v] = arg

    # b-level: longest path toward entries, forward topological sweep.
    b_next = [-1] * n
    for v in order:
        best, arg = 0.0, -1
        for u in graph.preds(v):
            cand = edge_comm_cost(graph, u, comm_factor) + mat[u, B_LEVEL]
            if arg == -1 or cand > best:
                best, arg = cand, u
        mat[v, B_LEVEL] = graph.vertices[v].flops + best
        b_next[v] = arg

    def walk(start: int, nxt: list[int]) -> tuple[int, ...]:
        path = [start]
        while nxt[path[-1]] != -1:
            path.append(nxt[path[-1]])
        return tuple(path)

    t_paths = tuple(walk(v, t_next) for v in range(n))
    b_paths = tuple(walk(v, b_next) for v in range(n))
    return StaticGraphFeatures(mat, b_paths, t_paths, comm_factor)
