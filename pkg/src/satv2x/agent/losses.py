"""Actor-critic and self-imitation losses.

Advantages are one-step TD errors ``r + gamma V(next) (1 - terminal) - V(cur)``.
``V(next)`` is always treated as a constant target.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .. import nn
from ..nn import Tensor
from .policy import ActionSpace, PolicyOutput, entropy, log_prob


def td_advantage(reward, value, value_next, terminal, gamma: float):
    """Works on floats/arrays; with a Tensor ``value`` the result is differentiable in it."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("discount must lie in [0, 1]")
    target = np.asarray(reward, float) + gamma * np.asarray(value_next, float) * (1.0 - np.asarray(terminal, float))
    if isinstance(value, Tensor):
        return nn.sub(target, value)
    return target - np.asarray(value, float)


class Losses(NamedTuple):
    policy: Tensor
    value: Tensor
    entropy: Tensor
    advantage: np.ndarray


def sil_losses(out: PolicyOutput, actions: np.ndarray, space: ActionSpace, reward, value_next, terminal,
               gamma: float, beta: float) -> Losses:
    """Self-imitation: only transitions with positive advantage drive the policy.

    policy = -(1/M) sum log pi(a|o) max(A, 0) - (beta/M) sum H(o);  value = (1/M) sum A^2
    """
    adv = td_advantage(reward, out.value, value_next, terminal, gamma)
    clipped = np.maximum(adv.data, 0.0)
    ent = entropy(out, space)
    lp = log_prob(out, actions, space)
    policy = -nn.mean(lp * clipped) - beta * nn.mean(ent)
    value = nn.mean(nn.square(adv))
    return Losses(policy, value, nn.mean(ent), adv.data.copy())


def a2c_losses(out: PolicyOutput, actions: np.ndarray, space: ActionSpace, reward, value_next, terminal,
               gamma: float, beta: float) -> Losses:
    """Advantage actor-critic with entropy bonus; advantages are not clipped."""
    adv = td_advantage(reward, out.value, value_next, terminal, gamma)
    ent = entropy(out, space)
    lp = log_prob(out, actions, space)
    policy = -nn.mean(lp * adv.data) - beta * nn.mean(ent)
    value = nn.mean(nn.square(adv))
    return Losses(policy, value, nn.mean(ent), adv.data.copy())


def masked_mse(pred: Tensor, target: np.ndarray, present: np.ndarray) -> Tensor:
    """Mean squared error over rows flagged ``present`` (0 when none are)."""
    w = present.astype(float)[:, None]
    n = max(float(w.sum()) * target.shape[1], 1.0)
    return nn.tsum(nn.square(pred - target) * w) * (1.0 / n)
