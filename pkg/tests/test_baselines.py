import numpy as np
import pytest

from satv2x.agent.learner import FixedPolicyAgent, Learner, train
from satv2x.agent.policy import ActionSpace
from satv2x.baselines import PolicyVariant, build_variant, feasible_triples, greedy_sinr_policy, random_policy
from satv2x.config import ConfigError, RunConfig
from satv2x.env import RSU, SAT, V2V, SatV2XEnv
from satv2x.eval import action_distribution


@pytest.fixture
def space():
    return ActionSpace.from_env(SatV2XEnv(RunConfig()))


def test_variant_table():
    assert PolicyVariant.from_tag("full") == PolicyVariant("FULL")
    maac = PolicyVariant.from_tag("MAAC")
    assert not (maac.attention or maac.fingerprint or maac.sil)
    assert not PolicyVariant.from_tag("RANDOM").learning
    with pytest.raises(ConfigError):
        PolicyVariant.from_tag("D3QN")


def test_build_variant_types(space):
    cfg = RunConfig()
    assert isinstance(build_variant("NO_SIL", cfg, space, 0), Learner)
    assert isinstance(build_variant("GREEDY_SINR", cfg, space, 0), FixedPolicyAgent)


def test_feasible_triple_count(space):
    # V2I: 4 subchannels x 1 level, V2S: 4 x 1, V2V: 4 x 4
    assert len(feasible_triples(space)) == 4 + 4 + 16


def test_random_policy_mode_frequencies(space):
    rng = np.random.default_rng(0)
    acts = random_policy(space, 100_000, rng)
    share = action_distribution(acts[:, 0])
    assert share["V2V"] == pytest.approx(100 * 16 / 24, abs=1.0)
    assert share["V2I"] == pytest.approx(100 * 4 / 24, abs=1.0)


def test_greedy_picks_best_previous_sinr_at_max_power(space):
    rng = np.random.default_rng(0)
    obs = np.array([[0.0, 0.0, 0.0, 1, 1, 1],
                    [5.0, 9.0, 1.0, 1, 1, 1],
                    [1.0, 2.0, 30.0, 1, 1, 1]])
    acts = greedy_sinr_policy(obs, space, rng)
    assert acts[:, 0].tolist() == [RSU, SAT, V2V]
    assert acts[2, 2] == 0  # 23 dBm is the largest V2V level
    assert space.sub_masks[SAT, acts[1, 1]]


def test_fixed_policies_train_without_updates():
    cfg = RunConfig().replace(run=dict(episodes=2))
    res = train(cfg, 0, "RANDOM")
    assert all(m["actor_loss"] == 0.0 for m in res.metrics)
