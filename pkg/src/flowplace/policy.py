"""Dual select/place policy over a dataflow graph.

Two policy networks drive a sequential assignment episode: SEL scores the
candidate set (vertices whose predecessors are all assigned) and PLC scores
the devices for the selected vertex. Both are built from a message-passing
GNN over the graph plus feedforward encoders of static vertex features and
dynamic device features.

Message passing normally runs once per episode; the evolving assignment
reaches the policy through the dynamic device features. mp_mode="per_step"
re-encodes the graph at every step instead, with the partial assignment
injected as extra vertex feature columns (those columns are zero at episode
start, so the per-episode mode sees them as constants).

Action sampling is an epsilon-mixture: with probability epsilon a uniform
choice, otherwise a draw from the softmax scores. Recorded log-probabilities
are those of the mixture itself, so the policy-gradient estimator matches
the actual sampling distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .cluster import ClusterSpec
from .features import StaticGraphFeatures, static_features
from .graph import DataflowGraph
from .heuristics import Assignment
from .timeline import PlacementTimeline

N_STATIC_FEATURES = 5
N_DEVICE_FEATURES = 5
N_DYNAMIC_COLS = 2  # assigned flag, normalized device id
MP_MODES = ("per_episode", "per_step")


@dataclass
class PolicyConfig:
    hidden: int = 32
    k_rounds: int = 2
    mp_mode: str = "per_episode"
    leaky_slope: float = 0.01
    shared_encoder: bool = False

    def __post_init__(self):
        if self.mp_mode not in MP_MODES:
            raise ValueError(f"mp_mode must be one of {MP_MODES}, got {self.mp_mode!r}")
        if self.k_rounds < 1:
            raise ValueError("k_rounds must be >= 1")

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "k_rounds": self.k_rounds,
            "mp_mode": self.mp_mode,
            "leaky_slope": self.leaky_slope,
            "shared_encoder": self.shared_encoder,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyConfig":
        return cls(**{k: doc[k] for k in
                      ("hidden", "k_rounds", "mp_mode", "leaky_slope",
                       "shared_encoder") if k in doc})


def _encoder_prefix(config: PolicyConfig, head: str) -> str:
    return "enc" if config.shared_encoder else head


def init_policy_params(config: PolicyConfig, seed: int = 0) -> nn.Params:
    rng = np.random.default_rng(seed)
    params: nn.Params = {}
    h = config.hidden
    in_dim = N_STATIC_FEATURES + N_DYNAMIC_COLS

    encoders = {"enc"} if config.shared_encoder else {"sel", "plc"}
    for enc in sorted(encoders):
        d_prev = in_dim
        for k in range(config.k_rounds):
            params[f"{enc}.gnn{k}.psi.w"] = nn.glorot_uniform(rng, 2 * d_prev + 1, h)
            params[f"{enc}.gnn{k}.psi.b"] = nn.zeros_param(1, h)
            params[f"{enc}.gnn{k}.phi.w"] = nn.glorot_uniform(rng, d_prev + h, h)
            params[f"{enc}.gnn{k}.phi.b"] = nn.zeros_param(1, h)
            d_prev = h
    for head in ("sel", "plc"):
        params[f"{head}.z.w"] = nn.glorot_uniform(rng, N_STATIC_FEATURES, h)
        params[f"{head}.z.b"] = nn.zeros_param(1, h)
        params[f"{head}.head1.w"] = nn.glorot_uniform(rng, 4 * h, h)
        params[f"{head}.head1.b"] = nn.zeros_param(1, h)
        params[f"{head}.head2.w"] = nn.glorot_uniform(rng, h, 1)
        params[f"{head}.head2.b"] = nn.zeros_param(1, 1)
    params["plc.y.w"] = nn.glorot_uniform(rng, N_DEVICE_FEATURES, h)
    params["plc.y.b"] = nn.zeros_param(1, h)
    return params


def _standardize(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = mat.mean(axis=0) if mat.size else np.zeros(mat.shape[1])
    std = mat.std(axis=0) if mat.size else np.ones(mat.shape[1])
    std = np.where(std < 1e-12, 1.0, std)
    return (mat - mean) / std, mean, std


@dataclass
class GraphEncoding:
    """Per-graph constants: normalized features and message index arrays."""

    graph: DataflowGraph
    features: StaticGraphFeatures
    x_static: np.ndarray           # n x 5, standardized
    msg_src: np.ndarray
    msg_dst: np.ndarray
    msg_edge: np.ndarray           # one normalized comm cost per message
    norm_stats: dict

    @classmethod
    def build(cls, graph: DataflowGraph, features: StaticGraphFeatures
              ) -> "GraphEncoding":
        x, mean, std = _standardize(features.matrix)
        src, dst, cost = [], [], []
        for u, v in graph.edges:
            c = graph.vertices[u].output_bytes * features.comm_factor
            # one message each way per edge, same edge cost
            src.append(u), dst.append(v), cost.append(c)
            src.append(v), dst.append(u), cost.append(c)
        cost_arr = np.asarray(cost, dtype=np.float64).reshape(-1, 1)
        if cost_arr.size:
            e_mean = float(cost_arr.mean())
            e_std = float(cost_arr.std()) or 1.0
        else:
            e_mean, e_std = 0.0, 1.0
        e_std = e_std if e_std >= 1e-12 else 1.0
        return cls(
            graph=graph,
            features=features,
            x_static=x,
            msg_src=np.asarray(src, dtype=np.intp),
            msg_dst=np.asarray(dst, dtype=np.intp),
            msg_edge=(cost_arr - e_mean) / e_std,
            norm_stats={"mean": mean.tolist(), "std": std.tolist(),
                        "edge_mean": e_mean, "edge_std": e_std},
        )


def gnn_encode(params: nn.Params, config: PolicyConfig, enc: GraphEncoding,
               head: str, dyn_cols: np.ndarray) -> nn.Tensor:
    """K rounds of message passing over in-and-out neighbors with summed
    messages; returns the n x hidden representation matrix."""
    prefix = _encoder_prefix(config, head)
    n = len(enc.graph)
    H = nn.Tensor(np.concatenate([enc.x_static, dyn_cols], axis=1))
    edge = nn.Tensor(enc.msg_edge)
    slope = config.leaky_slope
    for k in range(config.k_rounds):
        if enc.msg_src.size:
            hs = nn.row_gather(H, enc.msg_src)
            hd = nn.row_gather(H, enc.msg_dst)
            msg_in = nn.concat([hs, hd, edge], axis=1)
            msg = nn.leaky_relu(
                nn.add(nn.matmul(msg_in, params[f"{prefix}.gnn{k}.psi.w"]),
                       params[f"{prefix}.gnn{k}.psi.b"]), slope)
            agg = nn.segment_sum(msg, enc.msg_dst, n)
        else:
            agg = nn.Tensor(np.zeros((n, config.hidden)))
        upd_in = nn.concat([H, agg], axis=1)
        H = nn.leaky_relu(
            nn.add(nn.matmul(upd_in, params[f"{prefix}.gnn{k}.phi.w"]),
                   params[f"{prefix}.gnn{k}.phi.b"]), slope)
    return H


def _affine(params: nn.Params, name: str, x: nn.Tensor) -> nn.Tensor:
    return nn.add(nn.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])


def _head(params: nn.Params, head: str, emb: nn.Tensor,
          slope: float) -> nn.Tensor:
    hidden = nn.leaky_relu(_affine(params, f"{head}.head1", emb), slope)
    return _affine(params, f"{head}.head2", hidden)


def sel_forward(params: nn.Params, config: PolicyConfig, enc: GraphEncoding,
                H: nn.Tensor, candidates: list[int]) -> nn.Tensor:
    """Softmax over the candidate set from [H[v] || path sums || Z[v]] rows."""
    if not candidates:
        raise ValueError("empty candidate set")
    b_idx = np.concatenate([enc.features.b_paths[v] for v in candidates])
    b_seg = np.concatenate([np.full(len(enc.features.b_paths[v]), i)
                            for i, v in enumerate(candidates)])
    t_idx = np.concatenate([enc.features.t_paths[v] for v in candidates])
    t_seg = np.concatenate([np.full(len(enc.features.t_paths[v]), i)
                            for i, v in enumerate(candidates)])
    hv = nn.row_gather(H, candidates)
    hb = nn.segment_sum(nn.row_gather(H, b_idx), b_seg, len(candidates))
    ht = nn.segment_sum(nn.row_gather(H, t_idx), t_seg, len(candidates))
    z = _affine(params, "sel.z",
                nn.row_gather(nn.Tensor(enc.x_static), candidates))
    emb = nn.concat([hv, hb, ht, z], axis=1)
    scores = _head(params, "sel", emb, config.leaky_slope)
    return nn.softmax_row(nn.reshape(scores, (1, len(candidates))))


def plc_forward(params: nn.Params, config: PolicyConfig, enc: GraphEncoding,
                H: nn.Tensor, v: int, assigned_ids: list[int],
                assigned_devs: list[int], xd_norm: np.ndarray,
                device_count: int) -> nn.Tensor:
    """Softmax over devices from [H[v] || h_d || Y[d] || Z[v]] rows."""
    d = device_count
    hv = nn.repeat_rows(nn.row_gather(H, [v]), d)
    if assigned_ids:
        hd = nn.segment_sum(nn.row_gather(H, assigned_ids), assigned_devs, d)
    else:
        hd = nn.Tensor(np.zeros((d, config.hidden)))
    y = _affine(params, "plc.y", nn.Tensor(xd_norm))
    z = nn.repeat_rows(
        _affine(params, "plc.z", nn.row_gather(nn.Tensor(enc.x_static), [v])), d)
    emb = nn.concat([hv, hd, y, z], axis=1)
    scores = _head(params, "plc", emb, config.leaky_slope)
    return nn.softmax_row(nn.reshape(scores, (1, d)))


def dynamic_device_features(graph: DataflowGraph, timeline: PlacementTimeline,
                            v: int, cluster: ClusterSpec) -> np.ndarray:
    """The |D| x 5 device feature matrix for placing vertex v.

    Columns: total assigned compute cost; predecessor compute cost on the
    device; earliest committed start among predecessors on the device; time
    the last input becomes available on the device; earliest start for v.
    """
    d = cluster.device_count
    out = np.zeros((d, N_DEVICE_FEATURES))
    preds = graph.preds(v)
    for p in preds:
        if timeline.device[p] < 0:
            raise ValueError(f"predecessor {p} of vertex {v} is unassigned")
    for dev in range(d):
        out[dev, 0] = timeline.assigned_flops[dev]
        local = [p for p in preds if timeline.device[p] == dev]
        out[dev, 1] = sum(graph.vertices[p].flops for p in local)
        out[dev, 2] = min((timeline.start[p] for p in local), default=0.0)
        out[dev, 3] = timeline.inputs_ready_time(v, dev)
        out[dev, 4] = timeline.earliest_start(v, dev)
    return out


def normalize_device_features(xd: np.ndarray) -> np.ndarray:
    return _standardize(xd)[0]


@dataclass
class TraceStep:
    step: int
    candidates: tuple[int, ...]
    vertex: int
    sel_logprob: float
    device: int
    plc_logprob: float
    sel_entropy: float
    plc_entropy: float
    sel_argmax: int = -1   # vertex the policy would pick greedily
    plc_argmax: int = -1   # device the policy would pick greedily


@dataclass
class EpisodeTrace:
    steps: list[TraceStep] = field(default_factory=list)
    makespan_ms: float | None = None
    encode_invocations: int = 0
    logprob_tensors: list = field(default_factory=list, repr=False)
    entropy_tensors: list = field(default_factory=list, repr=False)


class TeacherActionError(RuntimeError):
    pass


class PolicyContext:
    """Per-graph rollout machinery: holds the graph encoding and counters so
    repeated episodes skip the static preprocessing."""

    def __init__(self, graph: DataflowGraph, cluster: ClusterSpec,
                 config: PolicyConfig,
                 features: StaticGraphFeatures | None = None):
        self.graph = graph
        self.cluster = cluster
        self.config = config
        self.features = features if features is not None else static_features(
            graph, cluster.comm_factor)
        self.enc = GraphEncoding.build(graph, self.features)
        self.encode_count = 0

    def _encode(self, params: nn.Params, head: str,
                dyn_cols: np.ndarray) -> nn.Tensor:
        self.encode_count += 1
        return gnn_encode(params, self.config, self.enc, head, dyn_cols)

    def _sample(self, probs: nn.Tensor, epsilon: float,
                rng: np.random.Generator, greedy: bool,
                forced: int | None) -> tuple[int, nn.Tensor, nn.Tensor]:
        k = probs.shape[1]
        mix = nn.scalar_add(nn.scalar_mul(probs, 1.0 - epsilon), epsilon / k)
        if forced is not None:
            idx = forced
        elif greedy:
            idx = int(np.argmax(probs.data[0]))
        elif rng.random() < epsilon:
            idx = int(rng.integers(k))
        else:
            u = rng.random()
            cum = np.cumsum(probs.data[0])
            idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
            idx = min(idx, k - 1)
        # floored log: softmax masses can underflow to exact zero once logits
        # saturate, and 0*log(0) would poison entropies and traces
        logmix = nn.log(nn.scalar_add(mix, 1e-30))
        lp = nn.row_gather(nn.reshape(logmix, (k, 1)), [idx])
        ent = nn.scalar_mul(nn.sum_all(nn.mul(mix, logmix)), -1.0)
        return idx, lp, ent

    def rollout(self, params: nn.Params, epsilon: float, seed: int,
                greedy: bool = False, teacher=None
                ) -> tuple[Assignment, EpisodeTrace]:
        """Run one full assignment episode.

        teacher, when given, forces its (vertex, device) actions at every
        step (used for imitation); epsilon and greedy then only shape the
        recorded log-probabilities.
        """
        graph, cluster, config = self.graph, self.cluster, self.config
        n = len(graph)
        d = cluster.device_count
        rng = np.random.default_rng(seed)
        timeline = PlacementTimeline(graph, cluster)
        candidates = sorted(graph.entry_vertices())
        n_preds_left = [len(graph.preds(v)) for v in range(n)]
        devices = [0] * n
        assigned_ids: list[int] = []
        assigned_devs: list[int] = []
        dyn = np.zeros((n, N_DYNAMIC_COLS))
        per_step = config.mp_mode == "per_step"
        trace = EpisodeTrace()
        start_count = self.encode_count

        if not per_step:
            h_sel = self._encode(params, "sel", dyn)
            h_plc = self._encode(params, "plc", dyn)

        for step in range(n):
            cand = tuple(candidates)
            if per_step:
                h_sel = self._encode(params, "sel", dyn)
            probs_sel = sel_forward(params, config, self.enc, h_sel, candidates)
            forced_v = None
            if teacher is not None:
                tv = teacher.select(candidates)
                if tv not in candidates:
                    raise TeacherActionError(
                        f"teacher selected vertex {tv} outside candidates {candidates}")
                forced_v = candidates.index(tv)
            idx, lp_sel, ent_sel = self._sample(probs_sel, epsilon, rng,
                                                greedy, forced_v)
            v = candidates[idx]

            xd = dynamic_device_features(graph, timeline, v, cluster)
            xd_norm = normalize_device_features(xd)
            if per_step:
                h_plc = self._encode(params, "plc", dyn)
            probs_plc = plc_forward(params, config, self.enc, h_plc, v,
                                    assigned_ids, assigned_devs, xd_norm, d)
            forced_d = teacher.place(v, timeline) if teacher is not None else None
            jdx, lp_plc, ent_plc = self._sample(probs_plc, epsilon, rng,
                                                greedy, forced_d)

            timeline.commit(v, jdx)
            devices[v] = jdx
            assigned_ids.append(v)
            assigned_devs.append(jdx)
            dyn[v, 0] = 1.0
            dyn[v, 1] = (jdx + 1) / d
            candidates.remove(v)
            for w in graph.succs(v):
                n_preds_left[w] -= 1
                if n_preds_left[w] == 0:
                    candidates.append(w)
            candidates.sort()

            trace.steps.append(TraceStep(
                step=step, candidates=cand, vertex=v,
                sel_logprob=lp_sel.item(), device=jdx,
                plc_logprob=lp_plc.item(),
                sel_entropy=ent_sel.item(), plc_entropy=ent_plc.item(),
                sel_argmax=cand[int(np.argmax(probs_sel.data[0]))],
                plc_argmax=int(np.argmax(probs_plc.data[0]))))
            trace.logprob_tensors.extend([lp_sel, lp_plc])
            trace.entropy_tensors.extend([ent_sel, ent_plc])

        trace.encode_invocations = self.encode_count - start_count
        return Assignment(tuple(devices), "doppler"), trace


def assign_rollout(graph: DataflowGraph, cluster: ClusterSpec,
                   params: nn.Params, config: PolicyConfig, epsilon: float,
                   seed: int, greedy: bool = False
                   ) -> tuple[Assignment, EpisodeTrace]:
    """One-shot rollout; build a PolicyContext to amortize preprocessing."""
    return PolicyContext(graph, cluster, config).rollout(
        params, epsilon, seed, greedy=greedy)
