import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satv2x.agent.replay import PrioritizedBuffer


def _filled(priorities, capacity=None):
    buf = PrioritizedBuffer(capacity or len(priorities), eps=1e-6)
    buf.add(np.asarray(priorities, float), value=np.arange(len(priorities), dtype=float))
    return buf


def test_sampling_is_proportional_chi_square():
    pri = np.array([1.0, 2.0, 3.0, 4.0])
    buf = _filled(pri)
    rng = np.random.default_rng(0)
    n = 100_000
    idx, _ = buf.sample(n, rng)
    observed = np.bincount(idx, minlength=4)
    expected = n * pri / pri.sum()
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    assert chi2 < 16.27  # 3 dof, p = 0.001


def test_equal_priorities_sample_uniformly():
    buf = _filled(np.ones(8))
    idx, _ = buf.sample(80_000, np.random.default_rng(1))
    observed = np.bincount(idx, minlength=8)
    assert float(np.sum((observed - 10_000) ** 2 / 10_000)) < 24.32  # 7 dof, p = 0.001


def test_priority_floor_keeps_zero_advantage_sampleable():
    buf = _filled([0.0, 1.0])
    assert buf.priority[0] == 1e-6
    assert 0 < buf.probabilities()[0] < 1e-5


def test_overflow_drops_lowest_priority_oldest_first():
    buf = PrioritizedBuffer(3)
    buf.add(np.array([0.5, 0.1, 0.1]), value=np.array([0.0, 1.0, 2.0]))
    buf.add(np.array([0.9]), value=np.array([3.0]))
    kept = sorted(buf.fields["value"][: len(buf)].tolist())
    assert kept == [0.0, 2.0, 3.0]
    buf.add(np.array([0.01]), value=np.array([4.0]))
    assert sorted(buf.fields["value"][: len(buf)].tolist()) == [0.0, 2.0, 3.0]


def test_update_priorities_changes_sampling():
    buf = _filled([1.0, 1.0])
    buf.update_priorities(np.array([0]), np.array([0.0]))
    assert buf.probabilities()[1] > 0.999


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0, 10), min_size=1, max_size=7), min_size=1, max_size=6),
       st.integers(1, 10))
def test_buffer_never_exceeds_capacity_and_keeps_fields_aligned(batches, capacity):
    buf = PrioritizedBuffer(capacity)
    for b in batches:
        p = np.asarray(b)
        buf.add(p, value=p.copy())
        assert len(buf) <= capacity
        stored = buf.fields["value"][: len(buf)]
        np.testing.assert_array_equal(np.maximum(stored, buf.eps), buf.priority[: len(buf)])
    assert abs(buf.probabilities().sum() - 1.0) < 1e-12


def test_sample_returns_matching_fields():
    buf = _filled([1.0, 2.0, 3.0])
    idx, fields = buf.sample(20, np.random.default_rng(0))
    np.testing.assert_array_equal(fields["value"], idx.astype(float))
