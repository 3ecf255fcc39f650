"""Incremental earliest-start placement model.

List-scheduling engines and the placement policy's device features both need
a cheap answer to "when could vertex v start on device d given what has been
placed so far". This model tracks one availability time per device and a
committed (start, end) per placed vertex, using the same clean duration model
as the simulator (no jitter, no slot contention beyond serial devices).

Entry vertices are inputs: available on every device at time zero, zero
duration, and they never occupy a device.
"""

from __future__ import annotations

from .cluster import ClusterSpec
from .graph import DataflowGraph


class PlacementTimeline:
    def __init__(self, graph: DataflowGraph, cluster: ClusterSpec):
        self.graph = graph
        self.cluster = cluster
        n = len(graph)
        self.device_avail = [0.0] * cluster.device_count
        self.assigned_flops = [0.0] * cluster.device_count
        self.device = [-1] * n
        self.start = [0.0] * n
        self.end = [0.0] * n

    def arrival_time(self, pred: int, device: int) -> float:
        """When pred's output is available on device."""
        if self.graph.is_entry(pred):
            return 0.0
        src = self.device[pred]
        if src < 0:
            raise ValueError(f"predecessor {pred} is not assigned yet")
        return self.end[pred] + self.cluster.transfer_duration(
            self.graph.vertices[pred].output_bytes, src, device)

    def inputs_ready_time(self, v: int, device: int) -> float:
        return max((self.arrival_time(u, device) for u in self.graph.preds(v)),
                   default=0.0)

    def earliest_start(self, v: int, device: int) -> float:
        return max(self.device_avail[device], self.inputs_ready_time(v, device))

    def commit(self, v: int, device: int) -> None:
        if self.device[v] >= 0:
            raise ValueError(f"vertex {v} is already placed")
        self.device[v] = device
        self.assigned_flops[device] += self.graph.vertices[v].flops
        if self.graph.is_entry(v):
            return
        start = self.earliest_start(v, device)
        dur = self.cluster.exec_duration(self.graph.vertices[v].flops, device)
        self.start[v] = start
        self.end[v] = start + dur
        self.device_avail[device] = self.end[v]
