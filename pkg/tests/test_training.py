import math

import numpy as np
import pytest

from flowplace import nn
from flowplace.heuristics import CriticalPathRule, brute_force_optimal, random_assign
from flowplace.policy import PolicyConfig, PolicyContext, init_policy_params
from flowplace.simulate import exec_time
from flowplace.training import (RewardTracker, SimulatorExecutor, StageSpec,
                                TrainConfig, fine_tune, imitation_stage,
                                load_checkpoint, measure_teacher_agreement,
                                run_pipeline, save_checkpoint, sim_rl_stage,
                                system_rl_stage)
from util import chain4, cluster2, fixture6

PC = PolicyConfig(hidden=16, k_rounds=1)


def test_reward_tracker_exact_mean():
    rng = np.random.default_rng(0)
    tracker = RewardTracker()
    assert tracker.baseline == 0.0  # first-episode convention
    values = list(rng.normal(size=57))
    for i, v in enumerate(values):
        tracker.observe(v)
        expected = math.fsum(values[:i + 1]) / (i + 1)
        assert tracker.baseline == expected


def test_reinforce_estimator_unbiased_on_bandit():
    """Two-arm bandit: the averaged stochastic gradient of the mixture
    policy matches the closed-form gradient of the expected reward."""
    rng = np.random.default_rng(1)
    theta = np.array([0.3, -0.2])
    rewards = np.array([1.0, 3.0])
    eps = 0.25

    def probs(th):
        e = np.exp(th - th.max())
        p = e / e.sum()
        return eps / 2 + (1 - eps) * p

    # closed form: d/dtheta sum_a pi(a) R(a)
    h = 1e-7
    closed = np.zeros(2)
    for i in range(2):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        closed[i] = ((probs(up) * rewards).sum() - (probs(dn) * rewards).sum()) / (2 * h)

    n = 100_000
    total = np.zeros(2)
    sq_total = np.zeros(2)
    p = probs(theta)
    for _ in range(n):
        a = 0 if rng.random() < p[0] else 1
        t = nn.Tensor(theta.reshape(1, 2), requires_grad=True)
        mix = nn.scalar_add(nn.scalar_mul(nn.softmax_row(t), 1 - eps), eps / 2)
        lp = nn.log(nn.row_gather(nn.reshape(mix, (2, 1)), [a]))
        nn.backward(nn.scalar_mul(lp, rewards[a]))
        g = t.grad[0]
        total += g
        sq_total += g * g
    mean = total / n
    var = sq_total / n - mean ** 2
    stderr = np.sqrt(var / n)
    assert np.all(np.abs(mean - closed) <= 3 * stderr + 1e-12)


def test_imitation_reaches_high_agreement():
    g = chain4()
    cl = cluster2(rate=1000.0, bandwidth=64.0)
    params = init_policy_params(PC, seed=0)
    ctx = PolicyContext(g, cl, PC)
    teacher = CriticalPathRule(g, cl, ctx.features)
    before = measure_teacher_agreement(ctx, params, teacher, rollouts=5)
    res = imitation_stage(g, cl, TrainConfig(episodes=400, lr0=3e-3, lr1=3e-4,
                                             seed=0), PC, params, context=ctx)
    after = measure_teacher_agreement(ctx, res.params, teacher, rollouts=20)
    assert after > before
    assert after >= 0.95
    assert res.final_loss is not None and np.isfinite(res.final_loss)


def test_imitation_single_vertex_loss_is_placement_only():
    # with one candidate the select probability is exactly 1, so the episode
    # loss reduces to -log Q(teacher device)
    from flowplace.graph import DataflowGraph, OpKind, Vertex
    g = DataflowGraph((Vertex(0, OpKind.MATMUL, 100, 8, "m"),), ())
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    ctx = PolicyContext(g, cl, PC)
    teacher = CriticalPathRule(g, cl, ctx.features)
    _, trace = ctx.rollout(params, epsilon=0.0, seed=0, teacher=teacher)
    (step,) = trace.steps
    assert step.sel_logprob == 0.0
    res = imitation_stage(g, cl, TrainConfig(episodes=1, lr0=0.0, lr1=0.0,
                                             seed=0), PC, params, context=ctx)
    assert abs(res.final_loss - (-step.plc_logprob)) < 1e-12


def test_warm_start_reaches_best_no_later_than_cold_start():
    g = fixture6()
    cl = cluster2()
    # warm start: imitation + sim checkpoint
    warm_params = init_policy_params(PC, seed=0)
    ctx = PolicyContext(g, cl, PC)
    imitation_stage(g, cl, TrainConfig(episodes=100, lr0=3e-3, lr1=3e-4,
                                       seed=0), PC, warm_params, context=ctx)
    sim_rl_stage(g, cl, TrainConfig(episodes=150, lr0=2e-3, lr1=1e-4,
                                    epsilon0=0.3, seed=0), PC, warm_params,
                 context=ctx)
    cold_params = init_policy_params(PC, seed=0)
    ex_cfg = dict(lr0=2e-3, lr1=1e-4, epsilon0=0.2, entropy_weight=0.01)
    warm = system_rl_stage(g, cl, SimulatorExecutor(cl, jitter_sigma=0.1,
                                                    base_seed=5),
                           TrainConfig(episodes=200, seed=1, **ex_cfg), PC,
                           warm_params)
    cold = system_rl_stage(g, cl, SimulatorExecutor(cl, jitter_sigma=0.1,
                                                    base_seed=5),
                           TrainConfig(episodes=200, seed=1, **ex_cfg), PC,
                           cold_params)

    def first_hit(curve, target):
        for row in curve:
            if row["makespan_ms"] <= target * 1.05:
                return row["index"]
        return len(curve)

    warm_hit = first_hit(warm.curve, warm.best_makespan)
    cold_hit = first_hit(cold.curve, warm.best_makespan)
    assert warm.best_makespan <= cold.best_makespan * 1.05
    assert warm_hit <= cold_hit


def test_imitation_zero_lr_keeps_params():
    g = chain4()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    snapshot = {k: v.data.copy() for k, v in params.items()}
    res = imitation_stage(g, cl, TrainConfig(episodes=3, lr0=0.0, lr1=0.0,
                                             seed=0), PC, params)
    assert np.isfinite(res.final_loss)
    for k, v in res.params.items():
        assert np.array_equal(v.data, snapshot[k])


def test_sim_rl_improves_over_random_and_tracks_best():
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    config = TrainConfig(episodes=300, lr0=2e-3, lr1=1e-4, epsilon0=0.3,
                         entropy_weight=0.01, seed=0)
    res = sim_rl_stage(g, cl, config, PC, params)
    assert len(res.curve) == 300
    rand_mean = np.mean([exec_time(g, random_assign(g, 2, seed=s), cl)[0]
                         for s in range(100)])
    assert res.best_makespan <= rand_mean
    _, oracle = brute_force_optimal(g, cl)
    assert res.best_makespan <= oracle * 1.10
    mk, _ = exec_time(g, res.best_assignment, cl)
    assert mk == res.best_makespan
    # curve rows carry the reporting fields
    row = res.curve[0]
    assert set(row) >= {"index", "makespan_ms", "advantage", "epsilon", "lr"}
    assert row["advantage"] == -row["makespan_ms"]  # first baseline is zero


def test_repeated_identical_rollout_shrinks_advantage():
    # frozen params, epsilon 0, one fixed rollout seed: the return R is the
    # same every episode, so the baseline converges to R and advantages
    # vanish after the first episode
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    ctx = PolicyContext(g, cl, PC)
    tracker = RewardTracker()
    advs = []
    for _ in range(10):
        assignment, _ = ctx.rollout(params, epsilon=0.0, seed=123)
        makespan, _ = exec_time(g, assignment, cl)
        reward = -makespan
        advs.append(abs(reward - tracker.baseline))
        tracker.observe(reward)
    assert advs[0] > 0
    assert max(advs[1:]) < 1e-9


def test_system_stage_runs_with_jittered_executor():
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    ex = SimulatorExecutor(cl, jitter_sigma=0.1, base_seed=7)
    config = TrainConfig(episodes=20, lr0=1e-3, lr1=1e-4, epsilon0=0.2, seed=1)
    res = system_rl_stage(g, cl, ex, config, PC, params)
    assert len(res.curve) == 20
    assert all(np.isfinite(r["makespan_ms"]) for r in res.curve)


def test_constant_executor_updates_vanish():
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)

    calls = []

    def constant_executor(graph, assignment):
        calls.append(1)
        return 42.0

    config = TrainConfig(episodes=25, lr0=1e-3, lr1=1e-3, epsilon0=0.0,
                         entropy_weight=0.0, seed=0)
    res = system_rl_stage(g, cl, constant_executor, config, PC, params)
    assert len(calls) == 25
    advs = [abs(r["advantage"]) for r in res.curve]
    assert max(advs[1:]) < 1e-9
    # with zero advantage and no entropy term, every update after the first
    # episode is exactly zero: a 1-episode run lands on the same parameters
    params_b = init_policy_params(PC, seed=0)
    short = system_rl_stage(g, cl, lambda *_: 42.0,
                            TrainConfig(episodes=1, lr0=1e-3, lr1=1e-3,
                                        epsilon0=0.0, entropy_weight=0.0,
                                        seed=0), PC, params_b)
    for k in res.params:
        assert np.array_equal(res.params[k].data, short.params[k].data)


def test_executor_failure_is_reported():
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)

    def broken(graph, assignment):
        raise IOError("device burned down")

    with pytest.raises(RuntimeError, match="executor failed"):
        system_rl_stage(g, cl, broken, TrainConfig(episodes=2), PC, params)


def test_checkpoint_round_trip_bit_identical_rollouts(tmp_path):
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    config = TrainConfig(episodes=30, lr0=1e-3, lr1=1e-4, seed=0)
    res = sim_rl_stage(g, cl, config, PC, params)
    path = tmp_path / "ckpt.json"
    ctx = PolicyContext(g, cl, PC)
    save_checkpoint(path, res.params, PC, config, norm_stats=ctx.enc.norm_stats)
    loaded, pconfig, sidecar = load_checkpoint(path)
    assert pconfig.hidden == PC.hidden and pconfig.k_rounds == PC.k_rounds
    assert "feature_norm" in sidecar
    a1, _ = ctx.rollout(res.params, epsilon=0.0, seed=11)
    a2, _ = PolicyContext(g, cl, pconfig).rollout(loaded, epsilon=0.0, seed=11)
    assert tuple(a1) == tuple(a2)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    path = tmp_path / "ckpt.json"
    other = PolicyConfig(hidden=8, k_rounds=2)
    save_checkpoint(path, params, other, TrainConfig())
    with pytest.raises(ValueError, match="checkpoint"):
        load_checkpoint(path)


def test_fine_tune_resumes_on_new_graph(tmp_path):
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    res = sim_rl_stage(g, cl, TrainConfig(episodes=30, seed=0), PC, params)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, res.params, PC, TrainConfig())
    g2 = chain4()
    tuned = fine_tune(path, g2, cl, TrainConfig(episodes=20, seed=1))
    assert len(tuned.curve) == 20
    assert tuned.best_assignment is not None and len(tuned.best_assignment) == len(g2)


def test_entropy_weight_pushes_policies_toward_uniform():
    # KL to uniform = log(choices) - entropy; averaged over the decisions of
    # a greedy rollout it must not increase as the entropy weight grows
    g = fixture6()
    cl = cluster2()
    kls = []
    for weight in (1e-3, 0.5, 50.0):
        params = init_policy_params(PC, seed=0)
        config = TrainConfig(episodes=150, lr0=2e-3, lr1=1e-3, epsilon0=0.2,
                             entropy_weight=weight, seed=0)
        res = sim_rl_stage(g, cl, config, PC, params)
        ctx = PolicyContext(g, cl, PC)
        _, trace = ctx.rollout(res.params, epsilon=0.0, seed=0, greedy=True)
        kl = 0.0
        for s in trace.steps:
            kl += np.log(len(s.candidates)) - s.sel_entropy
            kl += np.log(cl.device_count) - s.plc_entropy
        kls.append(kl / (2 * len(trace.steps)))
    assert kls[0] >= kls[1] >= kls[2]


def test_zero_shot_rollout_on_new_graph(tmp_path):
    g = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    res = sim_rl_stage(g, cl, TrainConfig(episodes=30, seed=0), PC, params)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, res.params, PC, TrainConfig())
    loaded, pconfig, _ = load_checkpoint(path)
    g2 = chain4()
    ctx2 = PolicyContext(g2, cl, pconfig)
    assignment, trace = ctx2.rollout(loaded, epsilon=0.0, seed=0, greedy=True)
    assert len(assignment) == len(g2)
    assert sorted(s.vertex for s in trace.steps) == list(range(len(g2)))


def test_transfer_fine_tune_beats_zero_shot(tmp_path):
    from flowplace.builders import build_ffnn
    src = fixture6()
    cl = cluster2()
    params = init_policy_params(PC, seed=0)
    res = sim_rl_stage(src, cl, TrainConfig(episodes=100, lr0=2e-3, lr1=1e-4,
                                            seed=0), PC, params)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, res.params, PC, TrainConfig())
    target = build_ffnn(8, 4, 16, 4, shard_grid=1)
    loaded, pconfig, _ = load_checkpoint(path)
    ctx = PolicyContext(target, cl, pconfig)
    zero_shot, _ = ctx.rollout(loaded, epsilon=0.0, seed=0, greedy=True)
    mk_zero, _ = exec_time(target, zero_shot, cl)
    tuned = fine_tune(path, target, cl,
                      TrainConfig(episodes=200, lr0=2e-3, lr1=1e-4, seed=0))
    assert tuned.best_makespan <= mk_zero


def test_pipeline_stage_order_enforced():
    g = fixture6()
    cl = cluster2()
    with pytest.raises(ValueError, match="subsequence"):
        run_pipeline(g, cl, [StageSpec("sim_rl", TrainConfig(episodes=1)),
                             StageSpec("imitation", TrainConfig(episodes=1))],
                     PC)
    with pytest.raises(ValueError, match="unknown stage"):
        run_pipeline(g, cl, [StageSpec("warp", TrainConfig(episodes=1))], PC)


def test_pipeline_single_stage_equals_direct_call():
    g = fixture6()
    cl = cluster2()
    config = TrainConfig(episodes=15, seed=0)
    direct = sim_rl_stage(g, cl, config, PC, init_policy_params(PC, seed=0))
    piped = run_pipeline(g, cl, [StageSpec("sim_rl", config)], PC, param_seed=0)
    assert [r["makespan_ms"] for r in piped.stages[0].curve] == \
           [r["makespan_ms"] for r in direct.curve]


def test_three_stage_pipeline_produces_three_curves():
    g = fixture6()
    cl = cluster2()
    specs = [StageSpec("imitation", TrainConfig(episodes=5, seed=0)),
             StageSpec("sim_rl", TrainConfig(episodes=5, seed=0)),
             StageSpec("system_rl", TrainConfig(episodes=5, seed=0))]
    result = run_pipeline(g, cl, specs, PC, param_seed=0)
    assert [r.stage for r in result.stages] == ["imitation", "sim_rl", "system_rl"]
    assert all(len(r.curve) == 5 for r in result.stages)
    best_mk, best_assign = result.best()
    assert best_assign is not None


def test_stage_ablation_grid_ordering():
    # with an equal total budget, more pretraining never ends up more than
    # 10% worse: all-three <= sim+system <= system-only (ties allowed)
    g = fixture6()
    cl = cluster2()
    budget = 240
    base = dict(lr0=2e-3, lr1=1e-4, epsilon0=0.3, entropy_weight=0.01)

    def cfg(episodes):
        return TrainConfig(episodes=episodes, seed=0, **base)

    def clean_best(result):
        best = None
        for stage in result.stages:
            if stage.best_assignment is None:
                continue
            mk, _ = exec_time(g, stage.best_assignment, cl)
            best = mk if best is None or mk < best else best
        return best

    ex = lambda: SimulatorExecutor(cl, jitter_sigma=0.1, base_seed=0)
    all_three = clean_best(run_pipeline(
        g, cl, [StageSpec("imitation", cfg(budget // 3)),
                StageSpec("sim_rl", cfg(budget // 3)),
                StageSpec("system_rl", cfg(budget // 3))],
        PC, executor=ex(), param_seed=0))
    sim_system = clean_best(run_pipeline(
        g, cl, [StageSpec("sim_rl", cfg(budget // 2)),
                StageSpec("system_rl", cfg(budget // 2))],
        PC, executor=ex(), param_seed=0))
    system_only = clean_best(run_pipeline(
        g, cl, [StageSpec("system_rl", cfg(budget))],
        PC, executor=ex(), param_seed=0))
    assert all_three <= sim_system * 1.10
    assert sim_system <= system_only * 1.10
