"""Acceptance checks. Each test prints one ``CRITERION n: PASS|FAIL ...`` line.

Criteria 7 and 8 train the dual network on five seeds of the default slow/fast
scene under the ``desk-scale`` preset and share those runs; expect about ten
minutes on one core. The lines are collected into an "acceptance criteria"
section at the end of the pytest summary.
"""

import math
import time

import numpy as np
import pytest

from spiketrigger.estimator import TrackResult, fim_trace, residuals_and_jacobian, triangulate
from spiketrigger.harness import build_world, calibrate_rewards, compare, load_config, run_episode
from spiketrigger.metrics import EnergyModel, TriggerLogView, energy, mtr, ttr
from spiketrigger.policy import QAgent, TrainerConfig, Transition
from spiketrigger.rewards import RewardConfig, RewardLedger, reward_init, reward_map, reward_track
from spiketrigger.simworld import PoseSE2, StereoRig
from spiketrigger.snn import (LiLayerState, LifLayerState, NeuronParams, SeanConfig, SeanNetwork, backward_window,
                              forward_batch, li_step, lif_step)

SEEDS = range(5)


def verdict(n, ok, detail):
    print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_1_neuron_dynamics_oracle():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst, reset_ok = 0.0, True
    for _ in range(10_000):
        p = NeuronParams(v_th=rng.uniform(0.2, 2.0), v_r=rng.uniform(-1.0, 0.1), tau=rng.uniform(1.0, 8.0))
        v, e = rng.normal(size=4), rng.normal(scale=2.0, size=4)
        state, s = lif_step(LifLayerState(v.copy(), p), e)
        for i in range(4):
            h = v[i] + (-(v[i] - p.v_r) + e[i]) / p.tau
            spike = 1.0 if h - p.v_th >= 0 else 0.0
            ref = p.v_r if spike else h
            worst = max(worst, abs(state.v[i] - ref), abs(s[i] - spike))
            reset_ok &= (not spike) or state.v[i] == p.v_r
        w = rng.normal(size=(3, 4))
        u = rng.normal(size=3)
        li = li_step(LiLayerState(u.copy(), w, p), s)
        for j in range(3):
            drive = sum(w[j, i] * s[i] for i in range(4))
            worst = max(worst, abs(li.v[j] - (u[j] + (-(u[j] - p.v_r) + drive) / p.tau)))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and reset_ok and elapsed < 5.0,
            f"max abs deviation {worst:.1e}, resets exact: {reset_ok}, {elapsed:.1f} s")


def _fd_worst(seed, eps=1e-6):
    rng = np.random.default_rng(seed)
    net = SeanNetwork(SeanConfig(n_in=4, n_hidden=3, input_gain=1.0), rng=rng)
    for k in net.params:
        net.params[k] = rng.normal(scale=0.8, size=net.params[k].shape)
    frames = rng.random((5, 4)) * 2.0
    g_q = rng.normal(size=2)

    def loss():
        return float(forward_batch(net, frames[None], spike_mode="smooth", record=False)[0][0] @ g_q)

    _, (trace, _, _) = forward_batch(net, frames[None], spike_mode="smooth")
    grads = backward_window(net, trace, g_q)
    worst = 0.0
    for k, p in net.params.items():
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + eps
            up = loss()
            p[idx] = keep - eps
            down = loss()
            p[idx] = keep
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(grads[k][idx] - fd) / max(abs(grads[k][idx]), abs(fd), 1e-6))
    return worst


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    worst = max(_fd_worst(s) for s in range(20))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-4 and elapsed < 30.0, f"worst relative error {worst:.1e} over 20 seeds, {elapsed:.1f} s")


MDP_FRAMES = [np.zeros((3, 4)), np.ones((3, 4))]
MDP = {(0, 1): (3.0, 1), (0, 0): (0.0, 0), (1, 0): (6.0, 1), (1, 1): (0.0, 0)}


def _value_iteration(gamma):
    q = np.zeros((2, 2))
    for _ in range(2000):
        q = np.array([[MDP[(s, a)][0] + gamma * q[MDP[(s, a)][1]].max() for a in (0, 1)] for s in (0, 1)])
    return q.argmax(axis=1).tolist()


def test_criterion_3_q_learning_sanity():
    cfg = TrainerConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.epsilon_init, cfg.epsilon_decay) == (32, 0.2, 0.8, 0.001)
    start = time.perf_counter()
    optimal = _value_iteration(cfg.gamma)
    learned = []
    for seed in range(5):
        ag = QAgent(SeanNetwork(SeanConfig(n_in=4), rng=np.random.default_rng(seed)), cfg, seed=seed)
        s = 0
        for _ in range(500):
            a, _ = ag.act(MDP_FRAMES[s])
            r, s2 = MDP[(s, a)]
            ag.push(Transition(MDP_FRAMES[s], a, r, MDP_FRAMES[s2]))
            ag.train_step()
            s = s2
        learned.append([ag.act(f, 0.0)[0] for f in MDP_FRAMES])
    elapsed = time.perf_counter() - start
    ok = all(g == optimal for g in learned) and elapsed < 60.0
    verdict(3, ok, f"optimal {optimal}, learned {learned} after 500 steps, {elapsed:.1f} s")


def test_criterion_4_reward_fidelity():
    cfg = RewardConfig(alpha=5.0, gamma_map=0.9, gamma_track=0.9, lambda_e_map=0.01, lambda_e_track=0.01)
    got = [reward_init(50, 30, 1, cfg), reward_init(7, 3, 0, cfg), reward_init(30, 30, 1, cfg)]
    led = RewardLedger()
    got += [reward_map(40, led, 200, 1, cfg), reward_map(None, led, 200, 0, cfg)]
    led = RewardLedger()
    got += [reward_track(3.5, led, 150, 1, cfg), reward_track(None, led, 150, 0, cfg)]
    expect = [20, -5, 0, 42, 34, 5.0, 1.65]
    exact = all(abs(g - e) <= 1e-12 for g, e in zip(got, expect))
    rng = np.random.default_rng(4)
    crossover = 0
    for _ in range(10_000):
        gamma, lam, idle = rng.uniform(0.01, 0.99), rng.uniform(1e-4, 1), rng.normal(scale=5)
        c = RewardConfig(gamma_map=gamma, gamma_track=gamma, lambda_e_map=lam, lambda_e_track=lam,
                         r_idle_map=idle, r_idle_track=idle)
        last, now, n_e = rng.uniform(0, 100), rng.uniform(0, 100), int(rng.integers(0, 500))
        fn = reward_map if rng.random() < 0.5 else reward_track
        on = fn(now, RewardLedger(last_info=last), n_e, 1, c)
        off = fn(None, RewardLedger(last_info=last), n_e, 0, c)
        crossover += (on > off) == (now + lam * n_e > gamma * last - lam * n_e + idle)
    verdict(4, exact and crossover == 10_000, f"examples {got}, crossover held on {crossover}/10000")


def test_criterion_5_fim_trace_and_jacobian():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        J, r = rng.normal(size=(20, 3)), rng.normal(size=20)
        res = TrackResult(PoseSE2(0, 0, 0), J, r, True, 1)
        dense = np.trace(J.T @ J) / np.sum(r ** 2)
        worst = max(worst, abs(fim_trace(res) - dense) / dense)
    rig = StereoRig()
    jac_worst = 0.0
    for seed in range(20):
        g = np.random.default_rng(seed)
        pose = np.array([g.normal(), g.normal(), g.uniform(-3, 3)])
        z = g.uniform(2, 10, 15)
        pts, _ = triangulate(g.integers(0, 320, 15), rig.focal * rig.baseline / z, PoseSE2.from_array(pose), rig)
        obs, sides = g.uniform(0, 320, 15), g.choice([-1, 1], 15)
        _, J = residuals_and_jacobian(pose, obs, pts, rig, sides)
        for k in range(3):
            d = np.zeros(3)
            d[k] = 1e-6
            fd = (residuals_and_jacobian(pose + d, obs, pts, rig, sides)[0]
                  - residuals_and_jacobian(pose - d, obs, pts, rig, sides)[0]) / 2e-6
            jac_worst = max(jac_worst, float(np.max(np.abs(J[:, k] - fd)) / np.max(np.abs(fd))))
    verdict(5, worst <= 1e-10 and jac_worst <= 1e-5,
            f"fim_trace relative error {worst:.1e}, Jacobian relative error {jac_worst:.1e}")


def test_criterion_6_metric_identities():
    checks = [
        ttr(TriggerLogView.from_actions(track_actions=[1, 1, 1, 1])) == (1.0, 100.0),
        ttr(TriggerLogView.from_actions(track_actions=[1, 0, 1, 0])) == (0.5, 50.0),
        mtr(TriggerLogView.from_actions(map_actions=[1] * 20)) == (1.0, 20.0),
        mtr(TriggerLogView.from_actions(map_actions=[0, 0, 0, 0])) == (0.0, 0.0),
        mtr(TriggerLogView.from_actions(map_actions=[1, 0, 0, 1])) == (0.5, 10.0),
        energy(TriggerLogView.from_actions([1], [1]), EnergyModel()) == 4400e6,
        energy(TriggerLogView.from_actions([], [])) == 0.0,
        energy(TriggerLogView.from_actions([0, 0], [0, 0, 0])) == 0.0,
    ]
    verdict(6, all(checks), f"{sum(checks)}/{len(checks)} identities exact")


@pytest.fixture(scope="module")
def desk_scale_runs():
    """Per seed: (always report, sean report, wall seconds for calibration plus both episodes)."""
    out = {}
    for seed in SEEDS:
        cfg = load_config(preset="desk-scale", overrides=[f"run.seed={seed}"])
        start = time.perf_counter()
        table = compare(cfg, ["always", "sean"])
        out[seed] = (table.reports[0], table.reports[1], time.perf_counter() - start)
    return out


@pytest.mark.slow
def test_criterion_7_efficiency(desk_scale_runs):
    lines, passed = [], 0
    for seed, (base, sean, secs) in desk_scale_runs.items():
        b, s = base.metrics, sean.metrics
        d_mtr = 1 - s.mtr_hz / b.mtr_hz
        d_ttr = 1 - s.ttr_hz / b.ttr_hz
        d_ape = s.ape_rms / b.ape_rms - 1 if math.isfinite(s.ape_rms) else math.inf
        ok = d_mtr >= 0.20 and d_ttr >= 0.10 and d_ape <= 0.05 and secs < 600
        passed += ok
        lines.append(f"seed {seed}: MTR -{d_mtr:.0%} TTR -{d_ttr:.0%} APE {d_ape:+.1%} "
                     f"{secs:.0f}s {'ok' if ok else 'miss'}")
    verdict(7, passed >= 3, f"{passed}/5 seeds; " + "; ".join(lines))


@pytest.mark.slow
def test_criterion_8_speed_tracks_mtr(desk_scale_runs):
    rho_sean = [r[1].speed_mtr_spearman for r in desk_scale_runs.values()]
    rho_base = [r[0].speed_mtr_spearman for r in desk_scale_runs.values()]
    ok = float(np.median(rho_sean)) >= 0.5 and all(abs(x) <= 0.2 for x in rho_base)
    verdict(8, ok, f"trained rho {[round(x, 2) for x in rho_sean]} (median {np.median(rho_sean):.2f}), "
                   f"always-trigger rho {[round(x, 2) for x in rho_base]}")


def test_criterion_9_reproducibility():
    cfg = load_config(overrides=["run.duration=8", "calibration.duration=8", "run.seed=3"])
    world = build_world(cfg)
    logs = [run_episode(cfg, world).log.to_csv().encode() for _ in range(2)]
    fresh = run_episode(cfg).log.to_csv().encode()
    verdict(9, logs[0] == logs[1] == fresh, f"{len(logs[0])} byte logs identical across 3 runs")
