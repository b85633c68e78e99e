"""Headline acceptance checks; each test records one PASS/FAIL line."""
import functools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from satv2x import cli, nn
from satv2x import config as cfgmod
from satv2x.agent.learner import Learner, _inputs_for_step
from satv2x.agent.losses import sil_losses
from satv2x.agent.policy import ActionSpace, PolicyOutput, log_prob
from satv2x.baselines import PolicyVariant
from satv2x.channel import Assignment, capacity, free_space_loss, interference_power
from satv2x.env import SAT, SatV2XEnv, build_neighbor_views
from satv2x.eval import estimation_metrics
from satv2x.experiments import run_job
from satv2x.gradcheck import run_gradcheck, summarize
from satv2x.nn import Tensor

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.ini"


@functools.lru_cache(maxsize=None)
def toy():
    return cfgmod.load(TOY)


_timings: dict[tuple, float] = {}


@functools.lru_cache(maxsize=None)
def toy_run(variant: str, seed: int, sharing: float = 1.0):
    cfg = toy().replace(learner={"sharing": sharing, "variant": variant})
    t0 = time.perf_counter()
    res = run_job(cfg, seed, variant)
    _timings[(variant, seed, sharing)] = time.perf_counter() - t0
    return res


def seeds():
    return list(toy().run.seeds)


def test_gradient_correctness(criterion):
    t0 = time.perf_counter()
    table = summarize(run_gradcheck(instances=20, seed=0))
    took = time.perf_counter() - t0
    worst = max(v["max_error"] for v in table.values())
    ok = all(v["passed"] and v["instances"] >= 20 for v in table.values()) and took < 60
    assert criterion("gradient correctness", ok,
                     f"{len(table)} ops x 20 instances, worst rel err {worst:.2e} (< 1e-4), {took:.1f} s (< 60 s)")


def test_attention_normalization(criterion):
    rng = np.random.default_rng(0)
    mha = nn.MultiHeadAttention(16, 16, 4, rng)
    worst_sum, worst_perm = 0.0, 0.0
    for n in range(1, 33):
        for _ in range(5):
            q, nb = rng.normal(size=(3, 16)), rng.normal(size=(3, n, 16))
            out, alpha = mha(q, nb)
            worst_sum = max(worst_sum, float(np.max(np.abs(alpha.data.sum(-1) - 1.0))))
            perm = rng.permutation(n)
            out_p, _ = mha(q, nb[:, perm])
            worst_perm = max(worst_perm, float(np.max(np.abs(out_p.data - out.data))))
    ok = worst_sum <= 1e-9 and worst_perm <= 1e-12
    assert criterion("attention normalization", ok,
                     f"max |sum(alpha)-1| {worst_sum:.1e} (<= 1e-9), max permutation drift {worst_perm:.1e} (<= 1e-12)")


def test_physics_oracles(criterion):
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        k = rng.integers(0, 6, n)
        p = rng.uniform(0, 300, n)
        g = rng.uniform(0, 1e-5, n)
        me = int(rng.integers(n))
        brute = 0.0
        for j in range(n):
            for kk in range(6):
                if j != me and k[j] == kk and k[me] == kk:
                    brute += p[j] * g[j]
        got = interference_power(me, [Assignment(j, int(k[j]), p[j], g[j]) for j in range(n)])
        mismatches += not math.isclose(got, brute, rel_tol=1e-12, abs_tol=0.0)
    cap_ok = all(capacity(b, 2.0, 0.5, 0.4, 0.6) == b for b in (1e6, 20e6, 123.0))
    env = SatV2XEnv(toy())
    sat_interf = 0.0
    for ep in range(5):
        env.reset(ep)
        for _ in range(env.sc.horizon):
            acts = np.stack([np.full(env.n_agents, SAT), rng.integers(4, 8, env.n_agents),
                             np.zeros(env.n_agents, int)], axis=1)
            acts[::2, 0] = rng.integers(0, 3, len(acts[::2]))
            acts[acts[:, 0] != SAT, 1] = rng.integers(0, 4, np.sum(acts[:, 0] != SAT))
            _, _, res = env.step(acts)
            sat = res.transmitted & (acts[:, 0] == SAT)
            sat_interf = max(sat_interf, float(np.max(res.interference[sat], initial=0.0)))
    fspl = float(free_space_loss(550e3, 30e9))
    ok = mismatches == 0 and cap_ok and sat_interf == 0.0 and abs(fspl - 176.80) <= 0.01
    assert criterion("physics oracles", ok,
                     f"interference mismatches {mismatches}/1000, SINR=1 gives C=B: {cap_ok}, "
                     f"max V2S interference {sat_interf}, FSPL {fspl:.3f} dB")


def test_reward_utility_semantics(criterion):
    rng = np.random.default_rng(0)
    base = toy()
    envs = [SatV2XEnv(base.replace(scenario=dict(density=float(d), horizon=int(h), packets_per_episode=int(pk))))
            for d, h, pk in zip(rng.integers(2, 9, 12), rng.integers(3, 15, 12), rng.integers(50, 1500, 12))]
    bad_sum = bad_eq = 0
    worst_mean = 0.0
    episodes = 10_000
    for e in range(episodes):
        env = envs[e % len(envs)]
        state, _ = env.reset(e)
        n = env.n_agents
        pulses = np.zeros(n)
        for _ in range(env.sc.horizon):
            acts = np.stack([rng.integers(0, 3, n), rng.integers(0, 8, n), rng.integers(0, 4, n)], axis=1)
            state, _, res = env.step(acts)
            pulses += res.utility
            worst_mean = max(worst_mean, abs(res.global_reward - float(np.mean(res.rewards))))
        bad_sum += int(np.sum((pulses != 0) & (pulses != 1)))
        bad_eq += int(np.sum(pulses != (state.delivered >= state.load)))
    ok = bad_sum == 0 and bad_eq == 0 and worst_mean <= 1e-12
    assert criterion("reward/utility semantics", ok,
                     f"{episodes} episodes: sum U not in {{0,1}} {bad_sum}, episode utility != sum pulses {bad_eq}, "
                     f"max |R - mean r| {worst_mean:.1e}")


def test_sil_clipping(criterion):
    rng = np.random.default_rng(0)
    k, p = 4, 3
    sub = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 1, 0, 0]], bool)
    pw = np.array([[1, 0, 0], [1, 0, 0], [1, 1, 1]], bool)
    space = ActionSpace(k, p, np.ones(3, bool), sub, pw, np.where(pw, 20.0, -np.inf))
    worst_zero, worst_val, worst_pol = 0.0, 0.0, 0.0
    for _ in range(50):
        m = int(rng.integers(2, 12))
        adv = rng.normal(size=m)
        adv[rng.random(m) < 0.4] = 0.0
        value = rng.normal(size=m)
        reward = value + adv  # terminal transitions: A = r - V exactly known
        logits = [Tensor(rng.normal(size=(m, 3))), Tensor(rng.normal(size=(m, k))), Tensor(rng.normal(size=(m, p)))]
        modes = rng.integers(0, 3, m)
        acts = np.stack([modes, [rng.choice(np.flatnonzero(sub[x])) for x in modes],
                         [rng.choice(np.flatnonzero(pw[x])) for x in modes]], axis=1)
        for t in logits:
            t.requires_grad = True
            t.grad = np.zeros_like(t.data)
        with nn.Tape() as tape:
            out = PolicyOutput(*logits, Tensor(value))
            losses = sil_losses(out, acts, space, reward, np.zeros(m), np.ones(m), 0.9, beta=0.0)
            nn.backward(tape, losses.policy)
        A = reward - value
        rows = A <= 0
        grads = np.concatenate([t.grad[rows].ravel() for t in logits])
        worst_zero = max(worst_zero, float(np.max(np.abs(grads), initial=0.0)))
        lp = log_prob(PolicyOutput(*(Tensor(t.data) for t in logits), Tensor(value)), acts, space).data
        expected = -float(np.sum(lp[~rows] * A[~rows])) / m
        worst_pol = max(worst_pol, abs(losses.policy.item() - expected))
        worst_val = max(worst_val, abs(losses.value.item() - float(np.mean(A ** 2))))
    ok = worst_zero == 0.0 and worst_val <= 1e-12 and worst_pol <= 1e-12
    assert criterion("SIL clipping", ok,
                     f"max |grad| from A<=0 rows {worst_zero}, policy term err {worst_pol:.1e}, "
                     f"value loss err {worst_val:.1e} (<= 1e-12)")


def test_learning_smoke(criterion):
    margins = []
    for s in seeds():
        margins.append(toy_run("FULL", s).final_utility - toy_run("RANDOM", s).final_utility)
    took = sum(v for (var, _, sh), v in _timings.items() if var in ("FULL", "RANDOM") and sh == 1.0)
    wins = sum(m >= 0.10 for m in margins)
    ok = wins >= 4 and took < 600
    assert criterion("learning smoke", ok,
                     f"FULL-RANDOM final-50 margins {[round(m, 3) for m in margins]}, {wins}/5 >= 0.10, "
                     f"{took:.0f} s (< 600 s)")


def test_ablation_trend(criterion):
    full = [toy_run("FULL", s).final_utility for s in seeds()]
    maac = [toy_run("MAAC", s).final_utility for s in seeds()]
    grid = " ".join(f"seed{s}: FULL {f:.3f} MAAC {m:.3f}" for s, f, m in zip(seeds(), full, maac))
    ok = np.mean(full) >= np.mean(maac)
    assert criterion("ablation trend", ok, f"mean FULL {np.mean(full):.3f} vs MAAC {np.mean(maac):.3f}; {grid}")


def _identities(m):
    return abs(m.rmse ** 2 - m.mse) <= 1e-12 * max(m.mse, 1.0) and m.mae <= m.rmse and (m.r2 is None or m.r2 <= 1)


def test_sharing_trend(criterion):
    mse_hi, mse_lo, identities = [], [], True
    for s in seeds():
        hi = estimation_metrics(toy_run("FULL", s).est_pred, toy_run("FULL", s).est_target)
        lo = estimation_metrics(toy_run("FULL", s, 0.4).est_pred, toy_run("FULL", s, 0.4).est_target)
        identities = identities and _identities(hi) and _identities(lo)
        mse_hi.append(hi.mse)
        mse_lo.append(lo.mse)
    wins = sum(h <= l for h, l in zip(mse_hi, mse_lo))
    ok = wins >= 4 and identities
    assert criterion("sharing trend", ok,
                     f"MSE@1.0 {[f'{x:.2e}' for x in mse_hi]} vs MSE@0.4 {[f'{x:.2e}' for x in mse_lo]}, "
                     f"{wins}/5 seeds, identities hold: {identities}")


def test_complexity_scaling(criterion):
    counts, sizes = [], [4, 8, 16, 32]
    for n in sizes:
        cfg = toy().replace(scenario=dict(density=float(n), neighbor_radius=5000.0, max_neighbors=3))
        env = SatV2XEnv(cfg)
        learner = Learner(cfg, ActionSpace.from_env(env), PolicyVariant.from_tag("FULL"), 0)
        state, obs = env.reset(0)
        window = np.zeros((n, cfg.learner.obs_window, 6))
        views = build_neighbor_views(env.graph(state), 1.0, np.random.default_rng(0))
        x = _inputs_for_step(window, None, views, np.zeros(2))
        with nn.no_grad(), nn.count_ops() as c:
            learner.estimator.eval()
            learner.estimator(x, neighbor_rows=np.where(views.shared, views.index, -1))
        counts.append(c.flops)
    slope, icpt = np.polyfit(sizes, counts, 1)
    pred = slope * np.asarray(sizes) + icpt
    r2 = 1 - np.sum((np.asarray(counts) - pred) ** 2) / np.sum((np.asarray(counts) - np.mean(counts)) ** 2)
    assert criterion("complexity scaling", r2 > 0.99,
                     f"estimator FLOPs per step {counts} for I={sizes}, linear fit R^2 {r2:.6f} (> 0.99)")


def test_determinism(criterion, tmp_path):
    quick = toy().replace(run=dict(episodes=2, eval_episodes=1, final_window=2, seeds=(3,)))
    cfg_path = tmp_path / "quick.ini"
    cfg_path.write_text(cfgmod.dumps(quick))
    commands = {
        "train": [],
        "ablate": ["--variant", "FULL,RANDOM", "--episodes", "1"],
        "sweep-sharing": ["--sharing", "1.0,0.4", "--episodes", "1"],
        "sweep-density": ["--density", "8", "--episodes", "1"],
        "gradcheck": ["--instances", "2"],
    }
    same = {}
    for name, extra in commands.items():
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            code = cli.main([name, "--config", str(cfg_path), "--out", str(out)] + extra)
            assert code == 0
            outs.append((out / "summary.json").read_bytes())
        same[name] = outs[0] == outs[1]
    ck = tmp_path / "train" / "a" / "checkpoint.bin"
    outs = []
    for rep in ("a", "b"):
        out = tmp_path / "evaluate" / rep
        assert cli.main(["evaluate", "--config", str(cfg_path), "--checkpoint", str(ck), "--out", str(out)]) == 0
        outs.append((out / "summary.json").read_bytes())
    same["evaluate"] = outs[0] == outs[1]
    json.loads(outs[0])
    assert criterion("determinism", all(same.values()), f"byte-identical summary.json per subcommand: {same}")
