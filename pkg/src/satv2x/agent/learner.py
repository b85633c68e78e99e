"""Training loop: decentralized acting with shared weights, centralized A2C + SIL updates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import nn
from ..baselines import PolicyVariant, greedy_sinr_policy, random_policy
from ..config import RunConfig
from ..env import N_MODES, OBS_DIM, SatV2XEnv, build_neighbor_views
from ..nn import Tensor
from .estimator import EstimatorInputs, Fingerprint, StateEstimator
from .features import ObsWindow, featurize, neighbor_targets
from .losses import a2c_losses, masked_mse, sil_losses
from .policy import ActionSpace, ActorCritic, PolicyOutput, select_actions
from .replay import PrioritizedBuffer

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("seed", "episode", "mean_R", "utility", "actor_loss", "critic_loss", "sil_loss", "est_mse",
                  "tx_v2i", "tx_v2s", "tx_v2v")


class TrainingDiverged(RuntimeError):
    pass


class Streams:
    """Independent RNG streams derived from one seed."""

    def __init__(self, seed: int):
        ss = np.random.SeedSequence(seed)
        init, act, share, sil, drop = ss.spawn(5)
        self.seed = seed
        self.init = np.random.default_rng(init)
        self.act = np.random.default_rng(act)
        self.share = np.random.default_rng(share)
        self.sil = np.random.default_rng(sil)
        self.dropout = np.random.default_rng(drop)

    def env_seed(self, episode: int, evaluation: bool = False) -> int:
        ss = np.random.SeedSequence([self.seed, 1 if evaluation else 0, episode])
        return int(ss.generate_state(1)[0])


class Learner:
    def __init__(self, cfg: RunConfig, space: ActionSpace, variant: PolicyVariant, seed: int):
        lc = cfg.learner
        self.cfg = cfg
        self.space = space
        self.variant = variant
        self.streams = Streams(seed)
        rng = self.streams.init
        self.estimator = StateEstimator(OBS_DIM, lc.gru_hidden, lc.attn_dim, lc.heads, lc.dropout, rng,
                                        attention=variant.attention, fingerprint=variant.fingerprint)
        self.heads = ActorCritic(self.estimator.out_dim, space, lc.actor_hidden, lc.critic_hidden, OBS_DIM, rng)
        self.opt_actor = nn.Adam(self.heads.actor_parameters(), lc.lr_actor)
        self.opt_critic = nn.Adam(self.heads.critic_parameters() + self.heads.est_out.parameters(), lc.lr_critic)
        self.opt_est = nn.Adam(self.estimator.parameters(), lc.lr_estimator or lc.lr_critic)
        self.buffer = PrioritizedBuffer(lc.buffer_capacity, lc.prio_eps)
        self.updates = 0
        self.dump_dir: Path | None = None

    # ------------------------------------------------------------------ model
    def named_parameters(self) -> dict[str, nn.Parameter]:
        out = self.estimator.named_parameters("estimator.")
        out.update(self.heads.named_parameters("heads."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters().items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(tensors)
        if missing:
            raise KeyError(f"checkpoint lacks {sorted(missing)}")
        for k, p in params.items():
            if p.data.shape != tensors[k].shape:
                raise ValueError(f"{k}: shape {tensors[k].shape} != {p.data.shape}")
            p.data[...] = tensors[k]

    def forward(self, x: EstimatorInputs, training: bool = False, neighbor_rows: np.ndarray | None = None):
        self.estimator.train(training)
        obs_hat, alpha = self.estimator(x, self.streams.dropout if training else None, neighbor_rows)
        out = self.heads(obs_hat)
        return obs_hat, out, alpha

    def act_batch(self, x: EstimatorInputs, raw_obs: np.ndarray, explore: bool = True,
                  neighbor_rows: np.ndarray | None = None):
        with nn.no_grad():
            obs_hat, out, _ = self.forward(x, neighbor_rows=neighbor_rows)
            est = self.heads.estimate(obs_hat).data
        actions = select_actions(out, self.space, self.streams.act, explore)
        return actions, out.value.data.copy(), est

    def values(self, x: EstimatorInputs, neighbor_rows: np.ndarray | None = None) -> np.ndarray:
        with nn.no_grad():
            _, out, _ = self.forward(x, neighbor_rows=neighbor_rows)
        return out.value.data.copy()

    # ------------------------------------------------------------------ updates
    def _params(self) -> list[nn.Parameter]:
        return list(self.named_parameters().values())

    def _apply(self, loss: Tensor, tape: nn.Tape, batch: dict) -> None:
        if not math.isfinite(loss.item()):
            self._dump(batch)
            raise TrainingDiverged(f"non-finite loss {loss.item()} at update {self.updates}")
        for p in self._params():
            p.zero_grad()
        nn.backward(tape, loss)
        nn.clip_grad_norm(self._params(), self.cfg.learner.max_grad_norm)
        self.opt_actor.step()
        self.opt_critic.step()
        self.opt_est.step()
        self.updates += 1

    def _dump(self, batch: dict) -> None:
        target = (self.dump_dir or Path(".")) / "diverged_batch.npz"
        try:
            np.savez(target, **{k: np.asarray(v) for k, v in batch.items()})
            log.error("non-finite loss; offending batch written to %s", target)
        except OSError:
            log.exception("could not write diverged batch")

    def a2c_update(self, batch: dict) -> dict[str, float]:
        """One gradient step on on-policy transitions; critic targets use rollout values of next states."""
        lc = self.cfg.learner
        x = EstimatorInputs(batch["own"], batch["neighbors"], batch["mask"], batch["fingerprint"])
        with nn.Tape() as tape:
            obs_hat, out, _ = self.forward(x, training=True)
            losses = a2c_losses(out, batch["action"], self.space, batch["reward"], batch["value_next"],
                                batch["terminal"], lc.gamma, lc.entropy)
            est = masked_mse(self.heads.estimate(obs_hat), batch["target"], batch["has_target"])
            total = losses.policy + lc.value_coef * losses.value + lc.lambda_est * est
            self._apply(total, tape, batch)
        return {"actor_loss": losses.policy.item(), "critic_loss": losses.value.item(), "est_mse": est.item()}

    def sil_update(self) -> float | None:
        lc = self.cfg.learner
        m = lc.batch_size
        if len(self.buffer) < m:
            log.debug("SIL skipped: buffer holds %d < %d entries", len(self.buffer), m)
            return None
        idx, b = self.buffer.sample(m, self.streams.sil)
        nxt = EstimatorInputs(b["next_own"], b["next_neighbors"], b["next_mask"], b["next_fingerprint"])
        v_next = self.values(nxt)
        x = EstimatorInputs(b["own"], b["neighbors"], b["mask"], b["fingerprint"])
        with nn.Tape() as tape:
            _, out, _ = self.forward(x, training=True)
            losses = sil_losses(out, b["action"], self.space, b["reward"], v_next, b["terminal"],
                                lc.gamma, lc.entropy)
            total = losses.policy + lc.value_coef * losses.value
            self._apply(total, tape, b)
        self.buffer.update_priorities(idx, np.maximum(losses.advantage, 0.0))
        return total.item()


class FixedPolicyAgent:
    """RANDOM / GREEDY_SINR behind the same acting interface as :class:`Learner`."""

    def __init__(self, variant: PolicyVariant, space: ActionSpace, seed: int = 0):
        self.variant = variant
        self.space = space
        self.streams = Streams(seed)

    def act_batch(self, x: EstimatorInputs, raw_obs: np.ndarray, explore: bool = True,
                  neighbor_rows: np.ndarray | None = None):
        n = len(raw_obs)
        if self.variant.tag == "RANDOM":
            actions = random_policy(self.space, n, self.streams.act)
        else:
            actions = greedy_sinr_policy(raw_obs, self.space, self.streams.act)
        return actions, np.zeros(n), np.zeros((n, OBS_DIM))


# ---------------------------------------------------------------------- rollouts

@dataclass
class Episode:
    inputs: EstimatorInputs  # leading axes [T+1, I]
    actions: np.ndarray  # [T, I, 3]
    rewards: np.ndarray  # [T, I]
    global_rewards: np.ndarray  # [T]
    utility: np.ndarray  # [T, I] completion pulses
    active: np.ndarray  # [T, I]
    transmitted: np.ndarray  # [T, I]
    values: np.ndarray  # [T+1, I]
    targets: np.ndarray  # [T+1, I, d]
    has_target: np.ndarray  # [T+1, I]
    est_pred: np.ndarray  # [T+1, I, d]
    delivered: np.ndarray  # [I]
    load: np.ndarray  # [I]
    violations: int = 0

    @property
    def episode_utility(self) -> np.ndarray:
        return (self.delivered >= self.load).astype(float)

    @property
    def terminal(self) -> np.ndarray:
        term = self.utility.astype(bool).copy()
        term[-1] = True
        return term

    def mode_counts(self) -> np.ndarray:
        modes = self.actions[..., 0]
        return np.array([np.sum(self.transmitted & (modes == m)) for m in range(N_MODES)])


def _inputs_for_step(window: np.ndarray, graph, views, fp: np.ndarray) -> EstimatorInputs:
    idx = np.where(views.shared, views.index, 0)
    nb = window[idx] * views.shared[..., None, None]
    return EstimatorInputs(window, nb, views.shared.copy(), np.broadcast_to(fp, (len(window), 2)).copy())


def run_episode(env: SatV2XEnv, agent, env_seed: int, sharing: float, share_rng: np.random.Generator,
                fingerprint: Fingerprint, window_size: int, explore: bool = True) -> Episode:
    state, obs = env.reset(env_seed)
    n, T = env.n_agents, env.sc.horizon
    fp = np.asarray(fingerprint, float)
    win = ObsWindow(n, window_size)
    feats = featurize(obs, state.load)
    window = win.reset(feats)
    steps_inputs, values, targets, has_t, preds = [], [], [], [], []
    actions, rewards, grewards, util, active, txd = [], [], [], [], [], []
    violations = 0

    def observe_step(window, feats):
        graph = env.graph(state)
        views = build_neighbor_views(graph, sharing, share_rng)
        x = _inputs_for_step(window, graph, views, fp)
        tg, ht = neighbor_targets(feats, graph.index, graph.exists)
        return x, tg, ht, np.where(views.shared, views.index, -1)

    x, tg, ht, rows = observe_step(window, feats)
    for t in range(T):
        a, v, est = agent.act_batch(x, obs, explore, rows)
        steps_inputs.append(x)
        values.append(v)
        targets.append(tg)
        has_t.append(ht)
        preds.append(est)
        state, obs, res = env.step(a)
        actions.append(a)
        rewards.append(res.rewards)
        grewards.append(res.global_reward)
        util.append(res.utility)
        active.append(res.active)
        txd.append(res.transmitted)
        violations += res.violations
        feats = featurize(obs, state.load)
        window = win.push(feats)
        x, tg, ht, rows = observe_step(window, feats)
    # final state: needed for the bootstrap value only
    if isinstance(agent, Learner):
        values.append(agent.values(x, rows))
        with nn.no_grad():
            obs_hat, _, _ = agent.forward(x, neighbor_rows=rows)
            preds.append(agent.heads.estimate(obs_hat).data)
    else:
        values.append(np.zeros(n))
        preds.append(np.zeros((n, OBS_DIM)))
    steps_inputs.append(x)
    targets.append(tg)
    has_t.append(ht)
    inputs = EstimatorInputs(*(np.stack([getattr(s, f) for s in steps_inputs]) for f in EstimatorInputs._fields))
    return Episode(inputs, np.stack(actions), np.stack(rewards), np.asarray(grewards), np.stack(util),
                   np.stack(active), np.stack(txd), np.stack(values), np.stack(targets), np.stack(has_t),
                   np.stack(preds), state.delivered.copy(), state.load.copy(), violations)


def transitions(ep: Episode) -> dict[str, np.ndarray]:
    """Flatten the agent-steps worth learning from (the agent still had data to send)."""
    T = ep.actions.shape[0]
    t_idx, i_idx = np.nonzero(ep.active)
    term = ep.terminal
    cur = ep.inputs
    out = {
        "own": cur.own[t_idx, i_idx], "neighbors": cur.neighbors[t_idx, i_idx], "mask": cur.mask[t_idx, i_idx],
        "fingerprint": cur.fingerprint[t_idx, i_idx],
        "next_own": cur.own[t_idx + 1, i_idx], "next_neighbors": cur.neighbors[t_idx + 1, i_idx],
        "next_mask": cur.mask[t_idx + 1, i_idx], "next_fingerprint": cur.fingerprint[t_idx + 1, i_idx],
        "action": ep.actions[t_idx, i_idx], "reward": ep.rewards[t_idx, i_idx],
        "terminal": term[t_idx, i_idx].astype(float),
        "value": ep.values[t_idx, i_idx], "value_next": ep.values[t_idx + 1, i_idx],
        "target": ep.targets[t_idx, i_idx], "has_target": ep.has_target[t_idx, i_idx],
    }
    del T
    return out


# ---------------------------------------------------------------------- training

@dataclass
class TrainResult:
    metrics: list[dict]
    agent: object
    mode_counts: np.ndarray
    final_episodes: list[Episode] = field(default_factory=list)


def train(cfg: RunConfig, seed: int, variant: str | None = None,
          progress: Callable[[dict], None] | None = None, dump_dir: Path | None = None) -> TrainResult:
    from ..baselines import build_variant

    tag = variant or cfg.learner.variant
    env = SatV2XEnv(cfg)
    space = ActionSpace.from_env(env)
    agent = build_variant(tag, cfg, space, seed)
    if not isinstance(agent, Learner):
        agent.streams = Streams(seed)
    else:
        agent.dump_dir = dump_dir
    streams = agent.streams
    lc = cfg.learner
    total = cfg.run.episodes
    metrics = []
    mode_counts = np.zeros(N_MODES, dtype=np.int64)
    for ep_i in range(total):
        fp = Fingerprint.at(ep_i, total)
        ep = run_episode(env, agent, streams.env_seed(ep_i), lc.sharing, streams.share, fp, lc.obs_window)
        counts = ep.mode_counts()
        if ep_i >= total - cfg.run.final_window:
            mode_counts += counts
        row = {"seed": seed, "episode": ep_i, "mean_R": float(np.mean(ep.global_rewards)),
               "utility": float(np.mean(ep.episode_utility)),
               "actor_loss": 0.0, "critic_loss": 0.0, "sil_loss": 0.0,
               "est_mse": float(_est_mse(ep)),
               "tx_v2i": int(counts[0]), "tx_v2s": int(counts[1]), "tx_v2v": int(counts[2])}
        if isinstance(agent, Learner):
            row.update(_learn_from(agent, ep))
        metrics.append(row)
        if progress is not None:
            progress(row)
    return TrainResult(metrics, agent, mode_counts)


def _est_mse(ep: Episode) -> float:
    h = ep.has_target
    if not h.any():
        return 0.0
    return float(np.mean((ep.est_pred[h] - ep.targets[h]) ** 2))


def _learn_from(agent: Learner, ep: Episode) -> dict[str, float]:
    lc = agent.cfg.learner
    batch = transitions(ep)
    n = len(batch["reward"])
    out = {"actor_loss": 0.0, "critic_loss": 0.0, "sil_loss": 0.0}
    if n == 0:
        return out
    order = agent.streams.sil.permutation(n)
    stats = []
    for start in range(0, n, lc.batch_size):
        sel = order[start:start + lc.batch_size]
        stats.append(agent.a2c_update({k: v[sel] for k, v in batch.items()}))
    out["actor_loss"] = float(np.mean([s["actor_loss"] for s in stats]))
    out["critic_loss"] = float(np.mean([s["critic_loss"] for s in stats]))
    if agent.variant.sil:
        adv = batch["reward"] + lc.gamma * batch["value_next"] * (1 - batch["terminal"]) - batch["value"]
        keep = {k: v for k, v in batch.items() if k not in ("value", "value_next", "target", "has_target")}
        agent.buffer.add(np.maximum(adv, lc.prio_eps), **keep)
        sil = [agent.sil_update() for _ in range(lc.sil_batches)]
        sil = [s for s in sil if s is not None]
        out["sil_loss"] = float(np.mean(sil)) if sil else 0.0
    return out


def evaluate(cfg: RunConfig, agent, seed: int, episodes: int, sharing: float | None = None,
             trace=None) -> dict:
    """Run ``episodes`` fresh episodes without learning; returns raw evaluation arrays.

    ``trace`` is an optional text stream receiving the per-step CSV trace.
    """
    env = SatV2XEnv(cfg, trace)
    streams = Streams(seed)
    share = cfg.learner.sharing if sharing is None else sharing
    fp = Fingerprint.at(cfg.run.episodes, cfg.run.episodes)
    utilities, counts, preds, targets = [], np.zeros(N_MODES, dtype=np.int64), [], []
    saved_act = agent.streams.act
    agent.streams.act = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    try:
        for e in range(episodes):
            ep = run_episode(env, agent, streams.env_seed(e, evaluation=True), share, streams.share, fp,
                             cfg.learner.obs_window)
            utilities.append(ep.episode_utility)
            counts += ep.mode_counts()
            h = ep.has_target
            preds.append(ep.est_pred[h])
            targets.append(ep.targets[h])
    finally:
        agent.streams.act = saved_act
    return {"utilities": np.asarray(utilities), "mode_counts": counts,
            "est_pred": np.concatenate(preds) if preds else np.zeros((0, OBS_DIM)),
            "est_target": np.concatenate(targets) if targets else np.zeros((0, OBS_DIM))}
