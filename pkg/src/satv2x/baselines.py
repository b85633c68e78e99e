"""Ablation variants and non-learning reference policies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import VARIANTS, ConfigError, RunConfig
from .env import N_MODES, RSU, Action


@dataclass(frozen=True)
class PolicyVariant:
    tag: str
    fingerprint: bool = True
    sil: bool = True
    attention: bool = True
    learning: bool = True

    @staticmethod
    def from_tag(tag: str) -> "PolicyVariant":
        tag = tag.upper()
        table = {
            "FULL": PolicyVariant("FULL"),
            "NF": PolicyVariant("NF", fingerprint=False),
            "NO_SIL": PolicyVariant("NO_SIL", sil=False),
            "NO_MHA": PolicyVariant("NO_MHA", attention=False),
            "MAAC": PolicyVariant("MAAC", fingerprint=False, sil=False, attention=False),
            "RANDOM": PolicyVariant("RANDOM", learning=False),
            "GREEDY_SINR": PolicyVariant("GREEDY_SINR", learning=False),
        }
        if tag not in table:
            raise ConfigError([f"unknown variant '{tag}' (known: {', '.join(VARIANTS)})"])
        return table[tag]


def feasible_triples(space) -> list[Action]:
    out = []
    for m in range(N_MODES):
        if not space.mode_mask[m]:
            continue
        for k in np.flatnonzero(space.sub_masks[m]):
            for p in np.flatnonzero(space.power_masks[m]):
                out.append(Action(m, int(k), int(p)))
    return out


def random_policy(space, n_agents: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over feasible (mode, subchannel, power level) triples."""
    triples = np.array(feasible_triples(space))
    if len(triples) == 0:
        raise ValueError("empty feasible action set")
    return triples[rng.integers(len(triples), size=n_agents)]


def greedy_sinr_policy(obs: np.ndarray, space, rng: np.random.Generator) -> np.ndarray:
    """Mode with the highest previous-step SINR, random subchannel in its pool, maximum power.

    Ties go to the lowest mode index; an all-zero SINR row (cold start) picks V2I.
    """
    sinr = np.where(space.mode_mask, obs[:, :N_MODES], -np.inf)
    mode = np.argmax(sinr, axis=1)
    mode[np.all(obs[:, :N_MODES] <= 0, axis=1)] = RSU
    out = np.empty((len(obs), 3), dtype=np.int64)
    for i, m in enumerate(mode):
        out[i] = (m, rng.choice(np.flatnonzero(space.sub_masks[m])), 0)
    out[:, 2] = [_max_power_level(space, m) for m in mode]
    return out


def _max_power_level(space, mode: int) -> int:
    return int(np.argmax(np.where(space.power_masks[mode], space.power_dbm[mode], -np.inf)))


def build_variant(tag: str, cfg: RunConfig, space, seed: int):
    """Configured agent for ``tag``: a learner for learning variants, a fixed policy otherwise."""
    from .agent.learner import FixedPolicyAgent, Learner

    variant = PolicyVariant.from_tag(tag)
    if variant.learning:
        return Learner(cfg, space, variant, seed)
    return FixedPolicyAgent(variant, space)
