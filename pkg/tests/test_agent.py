import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satv2x import nn
from satv2x.agent.estimator import EstimatorInputs, Fingerprint, StateEstimator, estimate_state
from satv2x.agent.features import ObsWindow, featurize, neighbor_targets
from satv2x.agent.learner import Learner, TrainingDiverged, train
from satv2x.agent.losses import a2c_losses, masked_mse, sil_losses, td_advantage
from satv2x.agent.policy import (
    ActionSpace,
    AllMaskedError,
    PolicyOutput,
    _masked_probs,
    entropy,
    log_prob,
    select_actions,
)
from satv2x.baselines import PolicyVariant
from satv2x.config import RunConfig
from satv2x.env import SatV2XEnv
from satv2x.nn import Tensor


def toy_cfg(**run):
    return RunConfig().replace(learner=dict(entropy=0.005), run=dict(episodes=2, **run))


def small_space():
    sub = np.array([[1, 1, 0, 0], [0, 0, 1, 1], [1, 1, 0, 0]], bool)
    pw = np.array([[1, 0, 0], [1, 0, 0], [1, 1, 1]], bool)
    return ActionSpace(4, 3, np.ones(3, bool), sub, pw, np.where(pw, [[23.0], [33.5], [23.0]], -np.inf))


def random_output(rng, b, space=None, scale=2.0):
    space = space or small_space()
    return PolicyOutput(Tensor(rng.normal(0, scale, (b, 3))), Tensor(rng.normal(0, scale, (b, space.n_subchannels))),
                        Tensor(rng.normal(0, scale, (b, space.n_power_levels))), Tensor(rng.normal(size=b)))


def test_featurize_and_window():
    obs = np.array([[15.0, 0.0, 3.0, 50.0, 50.0, 50.0]])
    f = featurize(obs, np.array([100.0]))
    np.testing.assert_allclose(f, [[4 / 16, 0.0, 2 / 16, 0.5, 0.5, 0.5]])
    win = ObsWindow(1, 3)
    w0 = win.reset(f)
    assert np.all(w0[0, :2] == 0) and np.all(w0[0, 2] == f[0])
    w1 = win.push(f * 2)
    np.testing.assert_array_equal(w1[0, 1], f[0])
    np.testing.assert_array_equal(w1[0, 2], 2 * f[0])


def test_neighbor_targets_mean_and_missing():
    feats = np.arange(12.0).reshape(3, 4)
    index = np.array([[1, 2], [0, -1], [-1, -1]])
    exists = index >= 0
    tg, has = neighbor_targets(feats, index, exists)
    np.testing.assert_allclose(tg[0], (feats[1] + feats[2]) / 2)
    np.testing.assert_allclose(tg[1], feats[0])
    assert has.tolist() == [True, True, False]


def test_fingerprint_schedule():
    assert Fingerprint.at(0, 100) == (0.0, 1.0)
    assert Fingerprint.at(50, 100) == (0.5, 0.5)
    assert Fingerprint.at(200, 100) == (1.0, 0.0)


def _estimator(rng, attention=True, fingerprint=True):
    return StateEstimator(6, 16, 8, 4, 0.2, rng, attention=attention, fingerprint=fingerprint)


@pytest.mark.parametrize("n", [0, 1, 5, 16])
def test_enhanced_observation_length(rng, n):
    est = _estimator(rng)
    neighbors = [rng.uniform(0, 1, (4, 6)) for _ in range(n)]
    out = estimate_state(est, rng.uniform(0, 1, (4, 6)), neighbors, Fingerprint(0.3, 0.7))
    assert out.shape == (16 + 8 + 2,)
    assert np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[-2:], [0.3, 0.7])


def test_no_neighbor_uses_default_context(rng):
    est = _estimator(rng)
    est.default_context.data[:] = rng.normal(size=8)
    out = estimate_state(est, rng.uniform(0, 1, (4, 6)), [], Fingerprint(0.0, 1.0))
    np.testing.assert_array_equal(out[16:24], est.default_context.data)


def test_no_fingerprint_variant_drops_fingerprint(rng):
    est = _estimator(rng, fingerprint=False)
    assert est.out_dim == 24


def _batch(rng, b=3, n=5):
    mask = rng.random((b, n)) < 0.6
    mask[0] = False
    return EstimatorInputs(rng.uniform(0, 1, (b, 4, 6)), rng.uniform(0, 1, (b, n, 4, 6)), mask,
                           rng.uniform(0, 1, (b, 2)))


@pytest.mark.parametrize("attention", [True, False])
def test_estimator_neighbor_permutation_invariance(rng, attention):
    est = _estimator(rng, attention=attention)
    est.eval()
    x = _batch(rng)
    perm = rng.permutation(x.mask.shape[1])
    xp = EstimatorInputs(x.own, x.neighbors[:, perm], x.mask[:, perm], x.fingerprint)
    a, _ = est(x)
    b, _ = est(xp)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12, rtol=0)


def test_neighbor_rows_fast_path_matches_full_encoding(rng):
    est = _estimator(rng)
    est.eval()
    own = rng.uniform(0, 1, (4, 4, 6))
    rows = np.array([[1, 2, -1], [0, -1, -1], [3, 0, 1], [-1, -1, -1]])
    mask = rows >= 0
    nb = own[np.where(mask, rows, 0)] * mask[..., None, None]
    x = EstimatorInputs(own, nb, mask, np.zeros((4, 2)))
    slow, _ = est(x)
    fast, _ = est(x, neighbor_rows=rows)
    np.testing.assert_allclose(fast.data, slow.data, rtol=1e-12, atol=1e-14)


def test_dropout_only_in_training(rng):
    est = _estimator(rng)
    est.default_context.data[:] = 1.0
    x = _batch(rng)
    est.eval()
    a, _ = est(x, np.random.default_rng(0))
    b, _ = est(x, np.random.default_rng(1))
    np.testing.assert_array_equal(a.data, b.data)
    est.train()
    c, _ = est(x, np.random.default_rng(0))
    assert not np.array_equal(a.data, c.data)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_selected_actions_always_feasible(seed, explore):
    rng = np.random.default_rng(seed)
    space = small_space()
    acts = select_actions(random_output(rng, 16, space, scale=5.0), space, rng, explore)
    for m, k, p in acts:
        assert space.mode_mask[m] and space.sub_masks[m, k] and space.power_masks[m, p]


def test_greedy_selection_breaks_ties_low(rng):
    space = small_space()
    z = lambda n: Tensor(np.zeros((1, n)))
    out = PolicyOutput(z(3), z(4), z(3), Tensor(np.zeros(1)))
    assert select_actions(out, space, None, explore=False).tolist() == [[0, 0, 0]]


def test_all_masked_factor_raises():
    with pytest.raises(AllMaskedError):
        _masked_probs(np.zeros((1, 3)), np.zeros((1, 3), bool))


def _joint_table(out, space):
    triples = [(m, k, p) for m in range(3) for k in np.flatnonzero(space.sub_masks[m])
               for p in np.flatnonzero(space.power_masks[m])]
    acts = np.array([t for t in triples])
    b = out.mode_logits.shape[0]
    rows = []
    for i in range(b):
        one = PolicyOutput(*(Tensor(np.repeat(t.data[i:i + 1], len(acts), axis=0)) for t in out))
        rows.append(log_prob(one, acts, space).data)
    return np.array(rows)


def test_log_prob_normalizes_and_entropy_is_exact(rng):
    space = small_space()
    out = random_output(rng, 4, space)
    lp = _joint_table(out, space)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(entropy(out, space).data, -(np.exp(lp) * lp).sum(axis=1), atol=1e-12)


def test_entropy_uniform_four_way():
    space = ActionSpace(4, 1, np.array([True, False, False]), np.array([[1, 1, 1, 1], [0] * 4, [0] * 4], bool),
                        np.array([[1], [0], [0]], bool), np.array([[23.0], [-np.inf], [-np.inf]]))
    out = PolicyOutput(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 1))),
                       Tensor(np.zeros(1)))
    assert entropy(out, space).item() == pytest.approx(math.log(4), abs=1e-12)


def test_td_advantage_oracle_critic_is_zero():
    gamma = 0.9
    # two-step chain: r0 = 1, r1 = 2, terminal after step 1
    v1 = 2.0
    v0 = 1.0 + gamma * v1
    adv = td_advantage(np.array([1.0, 2.0]), np.array([v0, v1]), np.array([v1, 123.0]), np.array([0, 1]), gamma)
    np.testing.assert_allclose(adv, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        td_advantage(0.0, 0.0, 0.0, 0, 1.5)


def _minus_one_logprob_output(value):
    space = ActionSpace(1, 1, np.ones(3, bool), np.ones((3, 1), bool), np.ones((3, 1), bool), np.zeros((3, 1)))
    b = math.log((math.e - 1) / 2)
    out = PolicyOutput(Tensor([[0.0, b, b]]), Tensor([[0.0]]), Tensor([[0.0]]), Tensor([value]))
    return out, space


def test_sil_single_entry_example():
    out, space = _minus_one_logprob_output(0.0)
    acts = np.array([[0, 0, 0]])
    assert log_prob(out, acts, space).item() == pytest.approx(-1.0, abs=1e-12)
    losses = sil_losses(out, acts, space, np.array([0.5]), np.array([0.0]), np.array([1.0]), 0.92, beta=0.0)
    assert losses.policy.item() == pytest.approx(0.5, abs=1e-12)
    assert losses.value.item() == pytest.approx(0.25, abs=1e-12)


def test_sil_negative_advantages_leave_only_entropy(rng):
    space = small_space()
    out = random_output(rng, 6, space)
    acts = select_actions(out, space, rng, True)
    value = out.value.data
    reward = value - rng.uniform(0.1, 1.0, 6)  # A = r - V < 0 with terminal transitions
    losses = sil_losses(out, acts, space, reward, np.zeros(6), np.ones(6), 0.92, beta=0.3)
    assert losses.policy.item() == pytest.approx(-0.3 * losses.entropy.item(), abs=1e-15)


def test_a2c_zero_advantage_leaves_only_entropy(rng):
    space = small_space()
    out = random_output(rng, 5, space)
    acts = select_actions(out, space, rng, True)
    losses = a2c_losses(out, acts, space, out.value.data.copy(), np.zeros(5), np.ones(5), 0.9, beta=0.1)
    assert losses.policy.item() == pytest.approx(-0.1 * losses.entropy.item(), abs=1e-15)
    assert losses.value.item() == 0.0


def test_masked_mse_ignores_absent_rows(rng):
    pred = Tensor(np.array([[1.0, 1.0], [5.0, 5.0]]))
    assert masked_mse(pred, np.zeros((2, 2)), np.array([True, False])).item() == 1.0
    assert masked_mse(pred, np.zeros((2, 2)), np.array([False, False])).item() == 0.0


def _learner(seed=0, variant="FULL"):
    cfg = toy_cfg()
    space = ActionSpace.from_env(SatV2XEnv(cfg))
    return Learner(cfg, space, PolicyVariant.from_tag(variant), seed), cfg


def test_learner_checkpoint_round_trip(tmp_path, rng):
    a, _ = _learner(0)
    b, _ = _learner(1)
    path = tmp_path / "w.bin"
    nn.save_checkpoint(path, a.state_dict())
    b.load_state_dict(nn.load_checkpoint(path))
    x = EstimatorInputs(rng.uniform(0, 1, (3, 4, 6)), rng.uniform(0, 1, (3, 8, 4, 6)),
                        rng.random((3, 8)) < 0.5, np.zeros((3, 2)))
    np.testing.assert_array_equal(a.values(x), b.values(x))


def test_learner_rejects_mismatched_checkpoint():
    a, _ = _learner(0)
    state = a.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        a.load_state_dict(state)


def test_training_is_deterministic():
    cfg = toy_cfg()
    r1 = train(cfg, 3)
    r2 = train(cfg, 3)
    assert r1.metrics == r2.metrics
    assert len(r1.metrics) == 2 and r1.metrics[0]["seed"] == 3


def test_nan_loss_raises_and_dumps_batch(tmp_path):
    learner, _ = _learner(0)
    learner.dump_dir = tmp_path
    with nn.Tape() as tape:
        loss = nn.tsum(learner.heads.critic_out.b * float("nan"))
        with pytest.raises(TrainingDiverged):
            learner._apply(loss, tape, {"probe": np.ones(3)})
    assert (tmp_path / "diverged_batch.npz").exists()


def test_ablation_toggles_only_touch_their_component():
    full, _ = _learner(0, "FULL")
    nf, _ = _learner(0, "NF")
    nomha, _ = _learner(0, "NO_MHA")
    assert full.estimator.out_dim == nf.estimator.out_dim + 2
    assert not hasattr(nomha.estimator, "mha")
    np.testing.assert_array_equal(full.estimator.gru.W.data, nf.estimator.gru.W.data)
