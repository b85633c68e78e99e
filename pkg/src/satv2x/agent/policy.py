"""Factorized (mode, subchannel, power level) policy with feasibility masking."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .. import nn
from ..env import N_MODES
from ..nn import Module, Tensor


class ActionSpace(NamedTuple):
    """Pool layout shared by the env and the policy heads."""

    n_subchannels: int
    n_power_levels: int
    mode_mask: np.ndarray  # [3]
    sub_masks: np.ndarray  # [3, K]: feasible subchannels given each mode
    power_masks: np.ndarray  # [3, P]
    power_dbm: np.ndarray  # [3, P], -inf where masked

    @staticmethod
    def from_env(env) -> "ActionSpace":
        dbm = np.full((N_MODES, env.n_power_levels), -np.inf)
        for m, levels in enumerate(env.power_sets):
            dbm[m, :len(levels)] = levels
        return ActionSpace(env.n_subchannels, env.n_power_levels, env.mode_mask(),
                           np.stack([env.subchannel_mask(m) for m in range(N_MODES)]),
                           np.stack([env.power_mask(m) for m in range(N_MODES)]), dbm)

    @property
    def n_logits(self) -> int:
        return N_MODES + self.n_subchannels + self.n_power_levels


class PolicyOutput(NamedTuple):
    mode_logits: Tensor
    sub_logits: Tensor
    power_logits: Tensor
    value: Tensor  # [B]


class ActorCritic(Module):
    def __init__(self, in_dim: int, space: ActionSpace, actor_hidden: int, critic_hidden: int,
                 est_dim: int, rng: np.random.Generator):
        self.space = space
        self.actor_fc = nn.Linear(in_dim, actor_hidden, rng)
        self.actor_out = nn.Linear(actor_hidden, space.n_logits, rng)
        self.critic_fc = nn.Linear(in_dim, critic_hidden, rng)
        self.critic_out = nn.Linear(critic_hidden, 1, rng)
        self.est_out = nn.Linear(in_dim, est_dim, rng)

    def actor_parameters(self):
        return self.actor_fc.parameters() + self.actor_out.parameters()

    def critic_parameters(self):
        return self.critic_fc.parameters() + self.critic_out.parameters()

    def __call__(self, obs_hat: Tensor) -> PolicyOutput:
        logits = self.actor_out(nn.relu(self.actor_fc(obs_hat)))
        k = self.space.n_subchannels
        value = self.critic_out(nn.relu(self.critic_fc(obs_hat)))
        return PolicyOutput(logits[:, :N_MODES], logits[:, N_MODES:N_MODES + k], logits[:, N_MODES + k:],
                            nn.reshape(value, (-1,)))

    def value(self, obs_hat: Tensor) -> Tensor:
        return nn.reshape(self.critic_out(nn.relu(self.critic_fc(obs_hat))), (-1,))

    def estimate(self, obs_hat: Tensor) -> Tensor:
        return self.est_out(obs_hat)


class AllMaskedError(ValueError):
    pass


def _masked_probs(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not np.all(mask.any(axis=-1)):
        raise AllMaskedError("every action of a factor is masked out")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def _sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((probs.shape[0], 1))
    c = np.cumsum(probs, axis=-1)
    c[:, -1] = 1.0
    idx = np.argmax(u < c, axis=-1)
    # never land on a zero-probability entry through rounding at the boundary
    bad = probs[np.arange(len(idx)), idx] == 0
    if np.any(bad):
        idx[bad] = np.argmax(probs[bad], axis=-1)
    return idx


def select_actions(out: PolicyOutput, space: ActionSpace, rng: np.random.Generator | None,
                   explore: bool) -> np.ndarray:
    """Pick one feasible (mode, subchannel, power level) row per agent.

    Without exploration each factor is its argmax (lowest index wins ties).
    """
    B = out.mode_logits.shape[0]
    p_mode = _masked_probs(out.mode_logits.data, np.broadcast_to(space.mode_mask, (B, N_MODES)))
    mode = _sample(p_mode, rng) if explore else np.argmax(p_mode, axis=-1)
    p_sub = _masked_probs(out.sub_logits.data, space.sub_masks[mode])
    p_pow = _masked_probs(out.power_logits.data, space.power_masks[mode])
    if explore:
        sub, pw = _sample(p_sub, rng), _sample(p_pow, rng)
    else:
        sub, pw = np.argmax(p_sub, axis=-1), np.argmax(p_pow, axis=-1)
    return np.stack([mode, sub, pw], axis=1)


def log_prob(out: PolicyOutput, actions: np.ndarray, space: ActionSpace) -> Tensor:
    """log pi(a) = log pi(mode) + log pi(k | mode) + log pi(P | mode), shape [B]."""
    B = actions.shape[0]
    rows = np.arange(B)
    mode = actions[:, 0]
    lm = nn.log_softmax(out.mode_logits, mask=np.broadcast_to(space.mode_mask, (B, N_MODES)))
    lk = nn.log_softmax(out.sub_logits, mask=space.sub_masks[mode])
    lp = nn.log_softmax(out.power_logits, mask=space.power_masks[mode])
    return lm[rows, mode] + lk[rows, actions[:, 1]] + lp[rows, actions[:, 2]]


def _categorical_entropy(logits: Tensor, mask: np.ndarray) -> Tensor:
    p = nn.softmax(logits, mask=mask)
    lp = nn.log_softmax(logits, mask=mask)
    return -nn.tsum(p * lp, axis=-1)


def entropy(out: PolicyOutput, space: ActionSpace) -> Tensor:
    """Exact entropy of the joint masked distribution, shape [B].

    H = H(mode) + sum_m pi(m) [H(k | m) + H(P | m)].
    """
    B = out.mode_logits.shape[0]
    mmask = np.broadcast_to(space.mode_mask, (B, N_MODES))
    p_mode = nn.softmax(out.mode_logits, mask=mmask)
    total = _categorical_entropy(out.mode_logits, mmask)
    for m in range(N_MODES):
        if not space.mode_mask[m]:
            continue
        cond = (_categorical_entropy(out.sub_logits, np.broadcast_to(space.sub_masks[m], out.sub_logits.shape))
                + _categorical_entropy(out.power_logits,
                                       np.broadcast_to(space.power_masks[m], out.power_logits.shape)))
        total = total + p_mode[:, m] * cond
    return total
