#!/usr/bin/env python3
"""Benchmark the Cython simulator core against the pure-Python fallback.

Times exec_time over the built graphs at several scales and prints a
speedup table. Both cores consume identical packed problems and produce
bit-identical schedules (asserted here on every case).

Usage: python benchmarks/bench_simulator.py [--repeats 5]
"""

import argparse
import os
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from flowplace import simulate
from flowplace.builders import build_chainmm, build_ffnn
from flowplace.cluster import ClusterSpec
from flowplace.features import static_features
from flowplace.heuristics import random_assign


def time_backend(backend, graph, assignment, cluster, features, repeats):
    os.environ["FLOWPLACE_SIM_BACKEND"] = backend
    best = None
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = simulate.exec_time(graph, assignment, cluster,
                                    strategy="depth_first", features=features)
        dt = time.perf_counter() - t0
        best = dt if best is None or dt < best else best
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if simulate._simcore is None:
        print("flowplace._simcore is not built; run "
              "`python setup.py build_ext --inplace` first")
        return 1

    cases = [
        ("chainmm shard=1", build_chainmm(64, 1), 2),
        ("chainmm shard=2", build_chainmm(64, 2), 4),
        ("ffnn shard=2", build_ffnn(32, 8, 64, 8, 2), 4),
        ("ffnn shard=3", build_ffnn(48, 12, 96, 12, 3), 8),
    ]
    print(f"{'case':<24} {'python':>10} {'cython':>10} {'speedup':>8}")
    for label, graph, devices in cases:
        name = f"{label} ({len(graph)} v)"
        cluster = ClusterSpec.uniform(devices, rate=1e6, bandwidth=1e5)
        assignment = random_assign(graph, devices, seed=0)
        features = static_features(graph, cluster.comm_factor)
        t_py, r_py = time_backend("python", graph, assignment, cluster,
                                  features, args.repeats)
        t_cy, r_cy = time_backend("cython", graph, assignment, cluster,
                                  features, args.repeats)
        assert r_py == r_cy, f"core mismatch on {name}"
        print(f"{name:<24} {t_py * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
              f"{t_py / t_cy:>7.1f}x")
    os.environ.pop("FLOWPLACE_SIM_BACKEND", None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
