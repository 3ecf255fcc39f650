"""Work-conserving scheduler simulation.

exec_time() realizes the event-driven execution of an assignment: repeatedly
start every startable task at the current time; when none is startable,
advance to the earliest pending completion (all completions sharing that time
are processed before re-enumerating), mark results ready, and loop until
every vertex's result is ready on its own device.

Vertices with no incoming edges are treated as inputs whose results are
available on every device at time zero; they are never executed or
transferred.

Two interchangeable cores run the inner loop: a Cython extension
(flowplace._simcore) and a pure-Python fallback (flowplace._simpy), selected
at import. Both produce bit-identical schedules; set FLOWPLACE_SIM_BACKEND to
"python" or "cython" to force one.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _simpy
from ._simpy import DeadlockError
from .cluster import ClusterSpec
from .features import StaticGraphFeatures, static_features
from .graph import DataflowGraph

try:
    from . import _simcore
except ImportError:
    _simcore = None

STRATEGIES = ("fifo", "depth_first", "breadth_first")
_STRATEGY_CODE = {"fifo": 0, "depth_first": 1, "breadth_first": 2}


def backend_name() -> str:
    forced = os.environ.get("FLOWPLACE_SIM_BACKEND", "auto")
    if forced == "python":
        return "python"
    if forced == "cython":
        if _simcore is None:
            raise RuntimeError("FLOWPLACE_SIM_BACKEND=cython but _simcore is not built")
        return "cython"
    return "cython" if _simcore is not None else "python"


@dataclass(frozen=True)
class Task:
    kind: str                 # "exec" | "transfer"
    vertex: int
    device: int | None = None
    src: int | None = None
    dst: int | None = None

    @staticmethod
    def exec_(vertex: int, device: int) -> "Task":
        return Task("exec", vertex, device=device)

    @staticmethod
    def transfer(vertex: int, src: int, dst: int) -> "Task":
        return Task("transfer", vertex, src=src, dst=dst)


@dataclass(frozen=True)
class Event:
    task: Task
    time_ms: float
    type: str                 # "beg" | "end"


@dataclass
class Schedule:
    events: tuple[Event, ...]
    makespan_ms: float


class ReadyMatrix:
    """rdy[v][d]: result of vertex v is materialized on device d. Monotone."""

    def __init__(self, graph: DataflowGraph, device_count: int):
        self.data = np.zeros((len(graph), device_count), dtype=bool)
        for v in range(len(graph)):
            if graph.is_entry(v):
                self.data[v, :] = True

    def get(self, v: int, d: int) -> bool:
        return bool(self.data[v, d])

    def set(self, v: int, d: int) -> None:
        self.data[v, d] = True


def enum_tasks(graph: DataflowGraph, rdy: ReadyMatrix, assignment,
               schedule: Schedule) -> list[Task]:
    """All transfers and execs that could start given readiness state.

    Deterministic order: transfers by (producer, dst device), then execs by
    vertex id. Slot availability is choose_task's concern, not enumerated
    here. Tasks already begun in the schedule are excluded.
    """
    assign = list(assignment)
    begun = {(e.task) for e in schedule.events if e.type == "beg"}
    out: list[Task] = []
    for v1 in range(len(graph)):
        if not graph.succs(v1) or not rdy.get(v1, assign[v1]):
            continue
        for dst in sorted({assign[w] for w in graph.succs(v1)}):
            if rdy.get(v1, dst):
                continue
            task = Task.transfer(v1, assign[v1], dst)
            if task not in begun:
                out.append(task)
    for v2 in range(len(graph)):
        if graph.is_entry(v2):
            continue
        dev = assign[v2]
        task = Task.exec_(v2, dev)
        if task in begun:
            continue
        if all(rdy.get(u, dev) for u in graph.preds(v2)):
            out.append(task)
    return out


def _free_slots(schedule: Schedule, cluster: ClusterSpec):
    exec_free = list(cluster.exec_slots)
    tr_free = [list(row) for row in cluster.transfer_slots]
    open_tasks = []
    for e in schedule.events:
        if e.type == "beg":
            open_tasks.append(e.task)
        else:
            open_tasks.remove(e.task)
    for task in open_tasks:
        if task.kind == "exec":
            exec_free[task.device] -= 1
        else:
            tr_free[task.src][task.dst] -= 1
    return exec_free, tr_free


def choose_task(graph: DataflowGraph, rdy: ReadyMatrix, assignment,
                schedule: Schedule, tasks: list[Task], strategy: str,
                cluster: ClusterSpec,
                features: StaticGraphFeatures | None = None) -> Task | None:
    """Pick the next task to start, or None when no task has a free slot.

    fifo takes the first enumerated task with a free slot; depth_first the
    free-slotted task whose vertex has the largest t-level; breadth_first the
    smallest b-level. Ties keep enumeration order.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if features is None and strategy != "fifo":
        features = static_features(graph, cluster.comm_factor)
    exec_free, tr_free = _free_slots(schedule, cluster)

    best: Task | None = None
    best_key = 0.0
    for task in tasks:
        if task.kind == "exec":
            if exec_free[task.device] <= 0:
                continue
        else:
            if tr_free[task.src][task.dst] <= 0:
                continue
        if strategy == "fifo":
            return task
        key = (features.t_level[task.vertex] if strategy == "depth_first"
               else features.b_level[task.vertex])
        if best is None or (strategy == "depth_first" and key > best_key) \
                or (strategy == "breadth_first" and key < best_key):
            best, best_key = task, key
    return best


def duration(graph: DataflowGraph, task: Task, cluster: ClusterSpec,
             seed: int = 0) -> float:
    """Duration of one task under the cluster model, jitter included when
    the cluster enables it. Pure in (task, cluster, seed)."""
    v = graph.vertices[task.vertex]
    if task.kind == "exec":
        return cluster.exec_duration(v.flops, task.device, seed=seed,
                                     vertex=task.vertex)
    return cluster.transfer_duration(v.output_bytes, task.src, task.dst,
                                     seed=seed, vertex=task.vertex)


def _pack(graph: DataflowGraph, assignment, cluster: ClusterSpec,
          features: StaticGraphFeatures | None, strategy: str, seed: int):
    n = len(graph)
    d = cluster.device_count
    assign = np.asarray(list(assignment), dtype=np.int32)
    if assign.shape != (n,):
        raise ValueError(f"assignment must map all {n} vertices")
    if n and (assign.min() < 0 or assign.max() >= d):
        raise ValueError("assignment names a device outside the cluster")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if features is None and strategy != "fifo":
        features = static_features(graph, cluster.comm_factor)

    pred_indptr = np.zeros(n + 1, dtype=np.int32)
    succ_indptr = np.zeros(n + 1, dtype=np.int32)
    for v in range(n):
        pred_indptr[v + 1] = pred_indptr[v] + len(graph.preds(v))
        succ_indptr[v + 1] = succ_indptr[v] + len(graph.succs(v))
    pred_indices = np.fromiter(
        (u for v in range(n) for u in graph.preds(v)), dtype=np.int32,
        count=int(pred_indptr[-1]))
    succ_indices = np.fromiter(
        (w for v in range(n) for w in graph.succs(v)), dtype=np.int32,
        count=int(succ_indptr[-1]))
    is_entry = np.fromiter((1 if graph.is_entry(v) else 0 for v in range(n)),
                           dtype=np.uint8, count=n)
    flops = np.fromiter((v.flops for v in graph.vertices), dtype=np.float64, count=n)
    obytes = np.fromiter((v.output_bytes for v in graph.vertices),
                         dtype=np.float64, count=n)
    rates = np.asarray(cluster.rates, dtype=np.float64)
    bw = np.asarray(cluster.bandwidth, dtype=np.float64).reshape(d * d)
    eslots = np.asarray(cluster.exec_slots, dtype=np.int32)
    tslots = np.asarray(cluster.transfer_slots, dtype=np.int32).reshape(d * d)
    if features is not None:
        tlev = np.ascontiguousarray(features.t_level)
        blev = np.ascontiguousarray(features.b_level)
    else:
        tlev = np.zeros(n, dtype=np.float64)
        blev = np.zeros(n, dtype=np.float64)
    return (n, d, pred_indptr, pred_indices, succ_indptr, succ_indices,
            is_entry, flops, obytes, assign, rates, bw, eslots, tslots,
            tlev, blev, _STRATEGY_CODE[strategy], float(cluster.comm_factor),
            float(cluster.jitter_sigma), int(seed))


def _assemble(makespan: float, raw_events) -> Schedule:
    events = []
    for tkind, v, a, b, time, etype in raw_events:
        if tkind == 0:
            task = Task.exec_(v, a)
        else:
            task = Task.transfer(v, a, b)
        events.append(Event(task, time, "beg" if etype == 0 else "end"))
    return Schedule(tuple(events), makespan)


def exec_time(graph: DataflowGraph, assignment, cluster: ClusterSpec,
              strategy: str = "fifo", seed: int = 0,
              features: StaticGraphFeatures | None = None
              ) -> tuple[float, Schedule]:
    """Simulate the work-conserving execution of an assignment.

    Returns (makespan in ms, full Schedule). Deterministic for fixed
    (assignment, cluster, strategy, seed); raises DeadlockError with the
    blocked frontier if the graph/assignment is inconsistent.
    """
    packed = _pack(graph, assignment, cluster, features, strategy, seed)
    if backend_name() == "cython":
        makespan, raw = _simcore.run_packed(*packed)
    else:
        makespan, raw = _simpy.run_packed(*packed)
    return makespan, _assemble(makespan, raw)


def schedule_to_dict(schedule: Schedule) -> dict:
    return {
        "makespan_ms": schedule.makespan_ms,
        "events": [
            {
                "task": {
                    "kind": e.task.kind,
                    "vertex": e.task.vertex,
                    "src": e.task.src,
                    "dst": e.task.dst,
                    "device": e.task.device,
                },
                "time_ms": e.time_ms,
                "type": e.type,
            }
            for e in schedule.events
        ],
    }


def schedule_from_dict(doc: dict) -> Schedule:
    events = []
    for rec in doc["events"]:
        t = rec["task"]
        if t["kind"] == "exec":
            task = Task.exec_(t["vertex"], t["device"])
        else:
            task = Task.transfer(t["vertex"], t["src"], t["dst"])
        events.append(Event(task, rec["time_ms"], rec["type"]))
    return Schedule(tuple(events), doc["makespan_ms"])


def _union_length(intervals: list[tuple[float, float]]) -> float:
    total = 0.0
    last_end = None
    for beg, end in sorted(intervals):
        if last_end is None or beg > last_end:
            total += end - beg
            last_end = end
        elif end > last_end:
            total += end - last_end
            last_end = end
    return total


def utilization_report(schedule: Schedule, cluster: ClusterSpec) -> dict:
    """Per-device busy fraction of [0, makespan] plus per-link transfer timeline."""
    makespan = schedule.makespan_ms
    exec_iv: dict[int, list[tuple[float, float]]] = {
        d: [] for d in range(cluster.device_count)}
    link_iv: dict[tuple[int, int], list[tuple[float, float]]] = {}
    open_beg: dict[Task, float] = {}
    for e in schedule.events:
        if e.type == "beg":
            open_beg[e.task] = e.time_ms
            continue
        beg = open_beg.pop(e.task)
        if e.task.kind == "exec":
            exec_iv[e.task.device].append((beg, e.time_ms))
        else:
            link_iv.setdefault((e.task.src, e.task.dst), []).append((beg, e.time_ms))
    devices = []
    for d in range(cluster.device_count):
        busy = _union_length(exec_iv[d])
        devices.append({
            "device": d,
            "busy_ms": busy,
            "busy_fraction": busy / makespan if makespan > 0 else 0.0,
            "intervals": [[b, e] for b, e in sorted(exec_iv[d])],
        })
    links = [
        {"src": s, "dst": t, "intervals": [[b, e] for b, e in sorted(iv)]}
        for (s, t), iv in sorted(link_iv.items())
    ]
    return {"makespan_ms": makespan, "devices": devices, "links": links}


def replay_violations(graph: DataflowGraph, assignment, cluster: ClusterSpec,
                      schedule: Schedule) -> list[str]:
    """Replay a schedule against enum_tasks and the resource model.

    Checks, in one pass: every begun task was enumerable with a free slot,
    slot capacities are never exceeded, readiness never unsets, times never
    decrease, and no startable task existed whenever time advanced (work
    conservation). Returns one message per violation.
    """
    out: list[str] = []
    assign = list(assignment)
    rdy = ReadyMatrix(graph, cluster.device_count)
    exec_free = list(cluster.exec_slots)
    tr_free = [list(row) for row in cluster.transfer_slots]
    prefix: list[Event] = []
    open_beg: set[Task] = set()
    t = 0.0

    def startable_exists() -> bool:
        for task in enum_tasks(graph, rdy, assign, Schedule(tuple(prefix), t)):
            if task.kind == "exec" and exec_free[task.device] > 0:
                return True
            if task.kind == "transfer" and tr_free[task.src][task.dst] > 0:
                return True
        return False

    for e in schedule.events:
        if e.time_ms < t - 1e-12:
            out.append(f"time-order: event at {e.time_ms} after time {t}")
        if e.time_ms > t + 1e-12:
            if startable_exists():
                out.append(f"work-conservation: idle advance from t={t} "
                           f"to t={e.time_ms} with a startable task")
            t = e.time_ms
        if e.type == "beg":
            candidates = enum_tasks(graph, rdy, assign, Schedule(tuple(prefix), t))
            if e.task not in candidates:
                out.append(f"invalid-start: {e.task} not enumerable at t={t}")
            if e.task.kind == "exec":
                exec_free[e.task.device] -= 1
                if exec_free[e.task.device] < 0:
                    out.append(f"resource-overflow: exec slots on device "
                               f"{e.task.device} at t={t}")
            else:
                tr_free[e.task.src][e.task.dst] -= 1
                if tr_free[e.task.src][e.task.dst] < 0:
                    out.append(f"resource-overflow: transfer slots "
                               f"{e.task.src}->{e.task.dst} at t={t}")
            open_beg.add(e.task)
        else:
            if e.task not in open_beg:
                out.append(f"dangling-end: {e.task} ends at t={t} without a beg")
            else:
                open_beg.discard(e.task)
            if e.task.kind == "exec":
                exec_free[e.task.device] += 1
                dev = e.task.device
            else:
                tr_free[e.task.src][e.task.dst] += 1
                dev = e.task.dst
            if rdy.get(e.task.vertex, dev):
                out.append(f"readiness-reset: vertex {e.task.vertex} already "
                           f"ready on device {dev} at t={t}")
            rdy.set(e.task.vertex, dev)
        prefix.append(e)

    for v in range(len(graph)):
        if not rdy.get(v, assign[v]):
            out.append(f"incomplete: vertex {v} never became ready on its device")
    end_times = [e.time_ms for e in schedule.events if e.type == "end"]
    max_end = max(end_times) if end_times else 0.0
    if abs(schedule.makespan_ms - max_end) > 1e-9:
        out.append(f"makespan-mismatch: recorded {schedule.makespan_ms}, "
                   f"max end {max_end}")
    return out
