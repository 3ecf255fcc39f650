"""Three-stage training for the dual policy.

Stage I (imitation): teacher-forced episodes minimizing the negative
log-likelihood of the critical-path rule's actions.
Stage II (sim_rl): episodic policy gradient against the simulator, reward =
negative simulated makespan, baseline = running mean of all previous returns,
entropy-regularized, one parameter update per episode.
Stage III (system_rl): the same update rule with the reward observed from a
pluggable Executor standing in for the real system.

Intermediate rewards are zero; every step of an episode shares the terminal
advantage.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .cluster import ClusterSpec
from .graph import DataflowGraph
from .heuristics import Assignment, CriticalPathRule
from .policy import PolicyConfig, PolicyContext, init_policy_params
from .simulate import exec_time

STAGES = ("imitation", "sim_rl", "system_rl")


@dataclass
class TrainConfig:
    episodes: int = 500
    lr0: float = 1e-4
    lr1: float = 1e-7
    epsilon0: float = 0.2
    entropy_weight: float = 1e-2
    seed: int = 0
    strategy: str = "fifo"

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        if self.entropy_weight < 0:
            raise ValueError("entropy_weight must be >= 0")

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes, "lr0": self.lr0, "lr1": self.lr1,
            "epsilon0": self.epsilon0, "entropy_weight": self.entropy_weight,
            "seed": self.seed, "strategy": self.strategy,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        keys = ("episodes", "lr0", "lr1", "epsilon0", "entropy_weight",
                "seed", "strategy")
        return cls(**{k: doc[k] for k in keys if k in doc})


class RewardTracker:
    """Baseline = arithmetic mean of all previously observed returns."""

    def __init__(self):
        self.returns: list[float] = []

    @property
    def baseline(self) -> float:
        if not self.returns:
            return 0.0
        return math.fsum(self.returns) / len(self.returns)

    def observe(self, r: float) -> None:
        self.returns.append(r)


class SimulatorExecutor:
    """Executor stand-in: the simulator with per-call jitter seeds.

    Each call observes one noisy runtime; the seed stream is deterministic
    given base_seed, so a training run is reproducible end to end.
    """

    def __init__(self, cluster: ClusterSpec, strategy: str = "fifo",
                 jitter_sigma: float = 0.1, base_seed: int = 0):
        if jitter_sigma > 0:
            cluster = ClusterSpec.from_dict(
                {**cluster.to_dict(), "jitter_sigma": jitter_sigma})
        self.cluster = cluster
        self.strategy = strategy
        self.base_seed = base_seed
        self._calls = itertools.count()

    def __call__(self, graph: DataflowGraph, assignment) -> float:
        seed = self.base_seed + next(self._calls)
        makespan, _ = exec_time(graph, assignment, self.cluster,
                                self.strategy, seed=seed)
        return makespan


@dataclass
class StageResult:
    stage: str
    params: nn.Params
    curve: list[dict]
    best_makespan: float | None = None
    best_assignment: Assignment | None = None
    encoder_invocations: int = 0
    final_loss: float | None = None


def _epsilon_schedule(config: TrainConfig) -> nn.LinearSchedule:
    return nn.LinearSchedule(config.epsilon0, 0.0, config.episodes)


def _lr_schedule(config: TrainConfig) -> nn.LinearSchedule:
    return nn.LinearSchedule(config.lr0, config.lr1, config.episodes)


def _episode_seeds(config: TrainConfig, stage: str) -> list[int]:
    root = np.random.SeedSequence([config.seed, STAGES.index(stage)])
    return [int(s.generate_state(1)[0]) for s in root.spawn(config.episodes)]


def imitation_stage(graph: DataflowGraph, cluster: ClusterSpec,
                    config: TrainConfig, pconfig: PolicyConfig,
                    params: nn.Params, teacher=None,
                    context: PolicyContext | None = None) -> StageResult:
    """Teacher-forced behavioral cloning of the critical-path rule."""
    ctx = context or PolicyContext(graph, cluster, pconfig)
    if teacher is None:
        teacher = CriticalPathRule(graph, cluster, ctx.features)
    sgd = nn.Sgd(_lr_schedule(config))
    curve = []
    start_enc = ctx.encode_count
    loss_val = None
    for ep, seed in enumerate(_episode_seeds(config, "imitation")):
        assignment, trace = ctx.rollout(params, epsilon=0.0, seed=seed,
                                        teacher=teacher)
        loss = nn.scalar_mul(_sum_tensors(trace.logprob_tensors), -1.0)
        loss_val = loss.item()
        nn.zero_grad(params)
        nn.backward(loss)
        lr = sgd.step(params)
        makespan, _ = exec_time(graph, assignment, cluster, config.strategy,
                                seed=0, features=ctx.features)
        curve.append({"index": ep, "makespan_ms": makespan, "loss": loss_val,
                      "advantage": 0.0, "epsilon": 0.0, "lr": lr})
    return StageResult("imitation", params, curve,
                       encoder_invocations=ctx.encode_count - start_enc,
                       final_loss=loss_val)


def _sum_tensors(tensors: list[nn.Tensor]) -> nn.Tensor:
    return nn.sum_all(nn.concat(tensors, axis=1))


def measure_teacher_agreement(ctx: PolicyContext, params: nn.Params, teacher,
                              rollouts: int = 100, seed: int = 0) -> float:
    """Fraction of teacher-forced steps where the policy's greedy action
    matches the teacher's, counting select and place decisions separately.

    Episodes follow the teacher's actions, matching the state distribution
    the imitation stage trains on.
    """
    agree = total = 0
    for k in range(rollouts):
        _, trace = ctx.rollout(params, epsilon=0.0, seed=seed + k,
                               teacher=teacher)
        for s in trace.steps:
            agree += int(s.sel_argmax == s.vertex)
            agree += int(s.plc_argmax == s.device)
            total += 2
    return agree / total if total else 1.0


def _rl_stage(stage: str, graph: DataflowGraph, cluster: ClusterSpec,
              reward_fn, config: TrainConfig, pconfig: PolicyConfig,
              params: nn.Params, context: PolicyContext | None) -> StageResult:
    ctx = context or PolicyContext(graph, cluster, pconfig)
    sgd = nn.Sgd(_lr_schedule(config))
    eps_sched = _epsilon_schedule(config)
    tracker = RewardTracker()
    curve = []
    best_mk, best_assign = None, None
    start_enc = ctx.encode_count
    for ep, seed in enumerate(_episode_seeds(config, stage)):
        epsilon = eps_sched.value(ep)
        assignment, trace = ctx.rollout(params, epsilon=epsilon, seed=seed)
        observed = reward_fn(graph, assignment)
        trace.makespan_ms = observed
        reward = -observed
        advantage = reward - tracker.baseline
        tracker.observe(reward)

        objective = nn.scalar_mul(_sum_tensors(trace.logprob_tensors), advantage)
        if config.entropy_weight > 0:
            entropy = _sum_tensors(trace.entropy_tensors)
            objective = nn.add(objective,
                               nn.scalar_mul(entropy, config.entropy_weight))
        loss = nn.scalar_mul(objective, -1.0)
        nn.zero_grad(params)
        nn.backward(loss)
        lr = sgd.step(params)

        if best_mk is None or observed < best_mk:
            best_mk, best_assign = observed, assignment
        curve.append({"index": ep, "makespan_ms": observed,
                      "advantage": advantage, "epsilon": epsilon, "lr": lr})
    return StageResult(stage, params, curve, best_makespan=best_mk,
                       best_assignment=best_assign,
                       encoder_invocations=ctx.encode_count - start_enc)


def sim_rl_stage(graph: DataflowGraph, cluster: ClusterSpec,
                 config: TrainConfig, pconfig: PolicyConfig,
                 params: nn.Params,
                 context: PolicyContext | None = None) -> StageResult:
    """Policy gradient with the clean simulator as the reward source."""
    ctx = context or PolicyContext(graph, cluster, pconfig)

    def reward_fn(g, assignment):
        makespan, _ = exec_time(g, assignment, cluster, config.strategy,
                                seed=0, features=ctx.features)
        return makespan

    return _rl_stage("sim_rl", graph, cluster, reward_fn, config, pconfig,
                     params, ctx)


def system_rl_stage(graph: DataflowGraph, cluster: ClusterSpec, executor,
                    config: TrainConfig, pconfig: PolicyConfig,
                    params: nn.Params,
                    context: PolicyContext | None = None) -> StageResult:
    """Policy gradient with rewards observed from the executor."""

    def reward_fn(g, assignment):
        try:
            return float(executor(g, assignment))
        except Exception as exc:
            raise RuntimeError(f"executor failed: {exc}") from exc

    return _rl_stage("system_rl", graph, cluster, reward_fn, config, pconfig,
                     params, context)


@dataclass
class StageSpec:
    stage: str
    config: TrainConfig


@dataclass
class PipelineResult:
    params: nn.Params
    stages: list[StageResult]

    def best(self) -> tuple[float | None, Assignment | None]:
        best_mk, best_assign = None, None
        for r in self.stages:
            if r.best_makespan is not None and (
                    best_mk is None or r.best_makespan < best_mk):
                best_mk, best_assign = r.best_makespan, r.best_assignment
        return best_mk, best_assign


def run_pipeline(graph: DataflowGraph, cluster: ClusterSpec,
                 stages: list[StageSpec], pconfig: PolicyConfig,
                 params: nn.Params | None = None, executor=None,
                 param_seed: int = 0) -> PipelineResult:
    """Run the requested stage subsequence, chaining parameters through."""
    order = [s.stage for s in stages]
    positions = []
    for s in order:
        if s not in STAGES:
            raise ValueError(f"unknown stage {s!r}")
        positions.append(STAGES.index(s))
    if positions != sorted(positions) or len(set(positions)) != len(positions):
        raise ValueError(f"stages must be a subsequence of {STAGES}, got {order}")

    if params is None:
        params = init_policy_params(pconfig, seed=param_seed)
    ctx = PolicyContext(graph, cluster, pconfig)
    results = []
    for spec in stages:
        if spec.stage == "imitation":
            res = imitation_stage(graph, cluster, spec.config, pconfig,
                                  params, context=ctx)
        elif spec.stage == "sim_rl":
            res = sim_rl_stage(graph, cluster, spec.config, pconfig, params,
                               context=ctx)
        else:
            ex = executor or SimulatorExecutor(cluster, spec.config.strategy,
                                               base_seed=spec.config.seed)
            res = system_rl_stage(graph, cluster, ex, spec.config, pconfig,
                                  params, context=ctx)
        params = res.params
        results.append(res)
    return PipelineResult(params, results)


SIDECAR_SUFFIX = ".sidecar.json"


def save_checkpoint(path: str | Path, params: nn.Params,
                    pconfig: PolicyConfig, config: TrainConfig,
                    norm_stats: dict | None = None) -> None:
    path = Path(path)
    nn.save_params(params, path)
    sidecar = {
        "policy": pconfig.to_dict(),
        "train": config.to_dict(),
        "feature_norm": norm_stats or {},
        "epsilon": {"v0": config.epsilon0, "v1": 0.0, "total": config.episodes},
    }
    Path(str(path) + SIDECAR_SUFFIX).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[nn.Params, PolicyConfig, dict]:
    path = Path(path)
    params = nn.load_params(path)
    sidecar_path = Path(str(path) + SIDECAR_SUFFIX)
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else {}
    pconfig = PolicyConfig.from_dict(sidecar.get("policy", {}))
    _check_param_shapes(params, pconfig)
    return params, pconfig, sidecar


def _check_param_shapes(params: nn.Params, pconfig: PolicyConfig) -> None:
    expected = init_policy_params(pconfig, seed=0)
    if set(expected) != set(params):
        missing = sorted(set(expected) ^ set(params))
        raise ValueError(f"checkpoint does not match policy config: {missing}")
    for name, t in expected.items():
        if params[name].shape != t.shape:
            raise ValueError(
                f"checkpoint tensor {name} has shape {params[name].shape}, "
                f"expected {t.shape}")


def fine_tune(checkpoint_path: str | Path, graph: DataflowGraph,
              cluster: ClusterSpec, config: TrainConfig,
              stage: str = "sim_rl", executor=None) -> StageResult:
    """Resume training from a checkpoint on a (possibly new) graph.

    Feature normalization is recomputed on the new graph by the fresh
    PolicyContext; parameter shapes must match the stored policy config.
    """
    params, pconfig, _ = load_checkpoint(checkpoint_path)
    ctx = PolicyContext(graph, cluster, pconfig)
    if stage == "sim_rl":
        return sim_rl_stage(graph, cluster, config, pconfig, params, context=ctx)
    if stage == "system_rl":
        ex = executor or SimulatorExecutor(cluster, config.strategy,
                                           base_seed=config.seed)
        return system_rl_stage(graph, cluster, ex, config, pconfig, params,
                               context=ctx)
    if stage == "imitation":
        return imitation_stage(graph, cluster, config, pconfig, params,
                               context=ctx)
    raise ValueError(f"unknown stage {stage!r}")
