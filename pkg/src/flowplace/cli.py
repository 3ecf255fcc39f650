"""Command-line interface.

Subcommands: gen (graph builders), features (static feature dump), simulate,
assign, train, compare. Every command writes its artifacts under --out with
a manifest.json recording the exact configuration; output JSON files cite
the manifest by hash, and nothing records wall-clock time, so re-running a
command with the same arguments reproduces the outputs byte for byte.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .builders import build_chainmm, build_ffnn, explode_matmul_chain
from .cluster import ClusterSpec
from .features import static_features
from .gantt import schedule_to_svg
from .graph import (DataflowGraph, GraphFormatError, GraphValidationError,
                    load_json, save_json, validate)
from .heuristics import (Assignment, critical_path_assign,
                         enumerative_optimizer, random_assign,
                         single_device_assign, validate_assignment)
from .metrics import pearson, spearman
from .policy import PolicyConfig, PolicyContext
from .simulate import exec_time, schedule_to_dict, utilization_report
from .training import (STAGES, SimulatorExecutor, StageSpec, TrainConfig,
                       load_checkpoint, run_pipeline, save_checkpoint)

ENGINES = ("critical_path", "enumopt", "random", "single", "doppler")


class CliValidationError(ValueError):
    pass


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Manifest:
    def __init__(self, command: str, config: dict, out_dir: Path):
        self.out_dir = out_dir
        self.doc = {
            "tool_version": __version__,
            "command": command,
            "config": config,
            "config_hash": _config_hash(config),
            "inputs": sorted(str(v) for k, v in config.items()
                             if k in ("graph", "cluster", "assignment",
                                      "checkpoint", "checkpoint_in", "config_file")
                             and v),
            "outputs": [],
        }

    @property
    def hash(self) -> str:
        return self.doc["config_hash"]

    def write_json(self, name: str, payload: dict) -> Path:
        payload = {"manifest": self.hash, **payload}
        path = self.out_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        self.doc["outputs"].append(name)
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text)
        self.doc["outputs"].append(name)
        return path

    def finish(self) -> None:
        self.doc["outputs"] = sorted(self.doc["outputs"])
        (self.out_dir / "manifest.json").write_text(
            json.dumps(self.doc, indent=2, sort_keys=True) + "\n")


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_graph(path: str) -> DataflowGraph:
    return load_json(path)


def _load_cluster(path: str) -> ClusterSpec:
    try:
        return ClusterSpec.from_json(path)
    except (ValueError, KeyError) as exc:
        raise CliValidationError(f"cluster config {path}: {exc}") from exc


def _parse_dims(text: str) -> list[tuple[int, int]]:
    dims = []
    for part in text.split(","):
        rows, _, cols = part.strip().partition("x")
        if not cols:
            raise CliValidationError(f"bad dims entry {part!r}; expected RxC")
        dims.append((int(rows), int(cols)))
    return dims


def cmd_gen(args) -> int:
    out = _prepare_out(args)
    if args.kind == "chainmm":
        graph = build_chainmm(args.n, args.shard)
        config = {"kind": "chainmm", "n": args.n, "shard": args.shard}
    elif args.kind == "ffnn":
        graph = build_ffnn(args.batch, args.d_in, args.d_hidden, args.d_out,
                           args.shard)
        config = {"kind": "ffnn", "batch": args.batch, "d_in": args.d_in,
                  "d_hidden": args.d_hidden, "d_out": args.d_out,
                  "shard": args.shard}
    else:
        dims = _parse_dims(args.dims)
        graph = explode_matmul_chain(dims, args.shard, args.devices)
        config = {"kind": "chain", "dims": args.dims, "shard": args.shard,
                  "devices": args.devices}
    manifest = Manifest("gen", config, out)
    save_json(graph, out / "graph.json")
    manifest.doc["outputs"].append("graph.json")
    manifest.finish()
    print(f"graph.json: {len(graph)} vertices, {len(graph.edges)} edges, "
          f"{len(graph.meta_ops)} meta-ops")
    return 0


def cmd_features(args) -> int:
    out = _prepare_out(args)
    graph = _load_graph(args.graph)
    feats = static_features(graph, args.comm_factor)
    manifest = Manifest("features", {"graph": args.graph,
                                     "comm_factor": args.comm_factor}, out)
    manifest.write_json("features.json", {
        "comm_factor": args.comm_factor,
        "columns": ["compute_cost", "in_comm_sum", "out_comm_sum",
                    "t_level_cost", "b_level_cost"],
        "matrix": feats.matrix.tolist(),
        "b_paths": [list(p) for p in feats.b_paths],
        "t_paths": [list(p) for p in feats.t_paths],
    })
    manifest.finish()
    print(f"features.json: {feats.matrix.shape[0]} x {feats.matrix.shape[1]}")
    return 0


def _read_assignment(path: str, graph: DataflowGraph,
                     cluster: ClusterSpec) -> list[int]:
    doc = json.loads(Path(path).read_text())
    if "assignment" not in doc:
        raise CliValidationError(f"{path}: missing field: assignment")
    devices = [int(x) for x in doc["assignment"]]
    problems = validate_assignment(graph, devices, cluster.device_count)
    if problems:
        raise CliValidationError(f"{path}: " + "; ".join(problems))
    return devices


def cmd_simulate(args) -> int:
    out = _prepare_out(args)
    graph = _load_graph(args.graph)
    cluster = _load_cluster(args.cluster)
    devices = _read_assignment(args.assignment, graph, cluster)
    config = {"graph": args.graph, "cluster": args.cluster,
              "assignment": args.assignment, "strategy": args.strategy,
              "seed": args.seed}
    manifest = Manifest("simulate", config, out)
    makespan, schedule = exec_time(graph, devices, cluster, args.strategy,
                                   seed=args.seed)
    manifest.write_json("schedule.json", schedule_to_dict(schedule))
    manifest.write_json("utilization.json", utilization_report(schedule, cluster))
    manifest.write_text("gantt.svg",
                        schedule_to_svg(schedule, cluster, manifest.hash))
    manifest.finish()
    print(f"makespan_ms: {makespan:.6g}")
    return 0


def _run_engine(engine: str, graph: DataflowGraph, cluster: ClusterSpec,
                args) -> Assignment:
    if engine == "critical_path":
        return critical_path_assign(graph, cluster, trials=args.trials,
                                    seed=args.seed, strategy=args.strategy)
    if engine == "enumopt":
        return enumerative_optimizer(graph, cluster)
    if engine == "random":
        return random_assign(graph, cluster.device_count, seed=args.seed)
    if engine == "single":
        return single_device_assign(graph)
    if engine == "doppler":
        if not args.checkpoint:
            raise CliValidationError("engine doppler requires --checkpoint")
        params, pconfig, _ = load_checkpoint(args.checkpoint)
        ctx = PolicyContext(graph, cluster, pconfig)
        assignment, _ = ctx.rollout(params, epsilon=0.0, seed=args.seed,
                                    greedy=True)
        return assignment
    raise CliValidationError(f"unknown engine {engine!r}")


def cmd_assign(args) -> int:
    out = _prepare_out(args)
    graph = _load_graph(args.graph)
    cluster = _load_cluster(args.cluster)
    config = {"graph": args.graph, "cluster": args.cluster,
              "engine": args.engine, "trials": args.trials, "seed": args.seed,
              "strategy": args.strategy, "checkpoint": args.checkpoint}
    manifest = Manifest("assign", config, out)
    assignment = _run_engine(args.engine, graph, cluster, args)
    makespan, _ = exec_time(graph, assignment, cluster, args.strategy, seed=0)
    manifest.write_json("assignment.json", {
        "engine": assignment.engine,
        "assignment": list(assignment),
        "makespan_ms": makespan,
    })
    manifest.finish()
    print(f"{assignment.engine}: makespan_ms {makespan:.6g}")
    return 0


def _parse_stages(text: str, base: TrainConfig) -> list[StageSpec]:
    specs = []
    for part in text.split(","):
        name, _, count = part.strip().partition(":")
        if name not in STAGES:
            raise CliValidationError(
                f"unknown stage {name!r}; expected one of {STAGES}")
        config = TrainConfig.from_dict(base.to_dict())
        if count:
            config = TrainConfig.from_dict({**base.to_dict(),
                                            "episodes": int(count)})
        specs.append(StageSpec(name, config))
    return specs


def cmd_train(args) -> int:
    out = _prepare_out(args)
    graph = _load_graph(args.graph)
    cluster = _load_cluster(args.cluster)

    file_config: dict = {}
    if args.config:
        file_config = json.loads(Path(args.config).read_text())
    base = TrainConfig.from_dict(file_config)
    # flags override file values
    overrides = {k: v for k, v in (
        ("episodes", args.episodes), ("seed", args.seed),
        ("entropy_weight", args.entropy_weight), ("lr0", args.lr0),
        ("lr1", args.lr1), ("epsilon0", args.epsilon0),
        ("strategy", args.strategy)) if v is not None}
    base = TrainConfig.from_dict({**base.to_dict(), **overrides})
    pconfig = PolicyConfig.from_dict(file_config.get("policy", {}))
    if args.mp_mode:
        pconfig = PolicyConfig.from_dict({**pconfig.to_dict(),
                                          "mp_mode": args.mp_mode})

    config = {"graph": args.graph, "cluster": args.cluster,
              "stages": args.stages, "train": base.to_dict(),
              "policy": pconfig.to_dict(), "checkpoint_in": args.checkpoint_in,
              "config_file": args.config}
    manifest = Manifest("train", config, out)

    params = None
    if args.checkpoint_in:
        params, loaded_pconfig, _ = load_checkpoint(args.checkpoint_in)
        pconfig = loaded_pconfig
    specs = _parse_stages(args.stages, base)
    executor = SimulatorExecutor(cluster, base.strategy,
                                 jitter_sigma=args.executor_jitter,
                                 base_seed=base.seed)
    result = run_pipeline(graph, cluster, specs, pconfig, params=params,
                          executor=executor, param_seed=base.seed)

    report: dict = {"stages": []}
    ctx = PolicyContext(graph, cluster, pconfig)
    for spec, stage_result in zip(specs, result.stages):
        curve_name = f"curve_{spec.stage}.json"
        manifest.write_json(curve_name, {"stage": spec.stage,
                                         "curve": stage_result.curve})
        report["stages"].append({
            "stage": spec.stage,
            "episodes": spec.config.episodes,
            "best_makespan_ms": stage_result.best_makespan,
            "encoder_invocations": stage_result.encoder_invocations,
            "curve": curve_name,
        })
    best_mk, best_assign = result.best()
    if best_assign is not None:
        report["best_makespan_ms"] = best_mk
        report["best_assignment"] = list(best_assign)
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, result.params, pconfig, specs[-1].config,
                    norm_stats=ctx.enc.norm_stats)
    manifest.doc["outputs"].extend(["checkpoint.json",
                                    "checkpoint.json.sidecar.json"])
    manifest.write_json("report.json", report)
    manifest.finish()
    for row in report["stages"]:
        print(f"{row['stage']}: episodes {row['episodes']}, "
              f"best makespan {row['best_makespan_ms']}")
    return 0


def cmd_compare(args) -> int:
    out = _prepare_out(args)
    graph = _load_graph(args.graph)
    cluster = _load_cluster(args.cluster)
    engines = [e.strip() for e in args.engines.split(",")]
    for e in engines:
        if e not in ENGINES:
            raise CliValidationError(f"unknown engine {e!r}")
    config = {"graph": args.graph, "cluster": args.cluster,
              "engines": args.engines, "trials": args.trials,
              "probe_assignments": args.probe_assignments,
              "jitter_sigma": args.jitter_sigma, "seed": args.seed,
              "strategy": args.strategy, "checkpoint": args.checkpoint}
    manifest = Manifest("compare", config, out)

    jittered = ClusterSpec.from_dict({**cluster.to_dict(),
                                      "jitter_sigma": args.jitter_sigma})
    rows = []
    clean_series: list[float] = []
    noisy_series: list[float] = []

    def evaluate(name: str, assignment) -> None:
        clean, _ = exec_time(graph, assignment, cluster, args.strategy, seed=0)
        noisy = [exec_time(graph, assignment, jittered, args.strategy,
                           seed=args.seed + t)[0] for t in range(args.trials)]
        rows.append({"engine": name, "clean_ms": clean,
                     "noisy_mean_ms": float(np.mean(noisy)),
                     "noisy_std_ms": float(np.std(noisy))})
        clean_series.append(clean)
        noisy_series.append(float(np.mean(noisy)))

    for engine in engines:
        evaluate(engine, _run_engine(engine, graph, cluster, args))
    for k in range(args.probe_assignments):
        evaluate(f"probe_{k}",
                 random_assign(graph, cluster.device_count, seed=args.seed + 1000 + k))

    result = {
        "rows": rows,
        "pearson": pearson(clean_series, noisy_series),
        "spearman": spearman(clean_series, noisy_series),
    }
    manifest.write_json("compare.json", result)
    manifest.finish()
    width = max(len(r["engine"]) for r in rows)
    print(f"{'engine':<{width}}  {'clean ms':>12}  {'jittered ms':>20}")
    for r in rows:
        print(f"{r['engine']:<{width}}  {r['clean_ms']:>12.6g}  "
              f"{r['noisy_mean_ms']:>12.6g} +- {r['noisy_std_ms']:.3g}")
    print(f"pearson {result['pearson']:.4f}  spearman {result['spearman']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowplace",
        description="Assign dataflow graph vertices to devices under a "
                    "work-conserving scheduler.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a graph JSON from a builder")
    p.add_argument("kind", choices=("chainmm", "ffnn", "chain"))
    p.add_argument("--out", required=True)
    p.add_argument("--shard", type=int, default=2)
    p.add_argument("--n", type=int, default=64, help="chainmm matrix dim")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--d-in", type=int, default=4)
    p.add_argument("--d-hidden", type=int, default=16)
    p.add_argument("--d-out", type=int, default=4)
    p.add_argument("--dims", default="8x8,8x8", help="chain dims, e.g. 8x8,8x8")
    p.add_argument("--devices", type=int, default=8)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("features", help="dump static graph features")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--comm-factor", type=float, default=4.0)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("simulate", help="simulate an assignment")
    p.add_argument("--graph", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", default="fifo")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("assign", help="run an assignment engine")
    p.add_argument("--graph", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--engine", required=True, choices=ENGINES)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="fifo")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("train", help="train the dual policy")
    p.add_argument("--graph", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stages", default="sim_rl",
                   help="comma list, e.g. imitation:100,sim_rl:400")
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--checkpoint-in", default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--entropy-weight", type=float, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--lr1", type=float, default=None)
    p.add_argument("--epsilon0", type=float, default=None)
    p.add_argument("--strategy", default=None)
    p.add_argument("--mp-mode", default=None, choices=("per_episode", "per_step"))
    p.add_argument("--executor-jitter", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="compare engines under clean and "
                                       "jittered executors")
    p.add_argument("--graph", required=True)
    p.add_argument("--cluster", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--engines", default="critical_path,random,single")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--probe-assignments", type=int, default=25)
    p.add_argument("--jitter-sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="fifo")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliValidationError, GraphFormatError, GraphValidationError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
