"""Finite-difference sweep over every differentiable building block."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .agent.losses import a2c_losses, masked_mse, sil_losses
from .agent.policy import ActionSpace, PolicyOutput
from .nn import Tensor
from .nn.gradcheck import check_gradients

TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    op: str
    shape: tuple
    error: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _t(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape))


def _weights(rng, loss_shape):
    """Random projection so every output entry carries a distinct gradient."""
    return rng.normal(size=loss_shape)


def _case_affine(rng):
    b, i, o = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
    x, W, c = _t(rng, b, i), _t(rng, o, i), _t(rng, o)
    w = _weights(rng, (b, o))
    return (b, i, o), (lambda: nn.tsum(nn.affine(x, W, c) * w)), [x, W, c]


def _case_gru(rng):
    b, i, d = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    x, h = _t(rng, b, i), _t(rng, b, d)
    W, U, c = _t(rng, 3 * d, i), _t(rng, 3 * d, d), _t(rng, 3 * d)
    w = _weights(rng, (b, d))
    return (b, i, d), (lambda: nn.tsum(nn.gru_cell(x, h, W, U, c) * w)), [x, h, W, U, c]


def _case_softmax(rng):
    b, n = rng.integers(1, 4), rng.integers(2, 6)
    x = _t(rng, b, n, low=-3, high=3)
    mask = rng.random((b, n)) < 0.8
    mask[:, 0] = True
    w = _weights(rng, (b, n))
    return (b, n), (lambda: nn.tsum(nn.softmax(x, axis=-1, mask=mask) * w)), [x]


def _case_log_softmax(rng):
    b, n = rng.integers(1, 4), rng.integers(2, 6)
    x = _t(rng, b, n, low=-3, high=3)
    w = _weights(rng, (b, n))
    return (b, n), (lambda: nn.tsum(nn.log_softmax(x, axis=-1) * w)), [x]


def _case_mha(rng):
    heads = int(rng.integers(1, 3))
    d_model = heads * int(rng.integers(1, 3))
    d_in, n = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    q, nb = _t(rng, 2, d_in), _t(rng, 2, n, d_in)
    Wq, Wk, Wv = (_t(rng, d_model, d_in) for _ in range(3))
    Wo = _t(rng, d_model, d_model)
    mask = np.ones((2, n), bool)
    mask[1, 0] = n == 1
    w = _weights(rng, (2, d_model))

    def f():
        out, _ = nn.multi_head_attention(q, nb, Wq, Wk, Wv, Wo, heads, mask)
        return nn.tsum(out * w)
    return (heads, d_in, d_model, n), f, [q, nb, Wq, Wk, Wv, Wo]


def _random_space(rng) -> ActionSpace:
    k, p = 4, 3
    sub = np.zeros((3, k), bool)
    sub[0, :2] = sub[2, :2] = True
    sub[1, 2:] = True
    pw = np.zeros((3, p), bool)
    pw[0, 0] = pw[1, 0] = True
    pw[2, :] = True
    dbm = np.where(pw, 20.0, -np.inf)
    return ActionSpace(k, p, np.ones(3, bool), sub, pw, dbm)


def _policy_case(rng, loss_fn, pick, wrt_value):
    """Advantage weights in the policy term are constants, so the value head is only checked via value losses."""
    space = _random_space(rng)
    m = int(rng.integers(1, 5))
    ml, sl, pl = _t(rng, m, 3, low=-2, high=2), _t(rng, m, 4, low=-2, high=2), _t(rng, m, 3, low=-2, high=2)
    v = _t(rng, m)
    modes = rng.integers(0, 3, size=m)
    acts = np.stack([modes, [rng.choice(np.flatnonzero(space.sub_masks[x])) for x in modes],
                     [rng.choice(np.flatnonzero(space.power_masks[x])) for x in modes]], axis=1)
    r, vn = rng.normal(size=m), rng.normal(size=m)
    term = (rng.random(m) < 0.3).astype(float)

    def f():
        losses = loss_fn(PolicyOutput(ml, sl, pl, v), acts, space, r, vn, term, 0.92, 0.058)
        return pick(losses)
    return (m,), f, [ml, sl, pl] + ([v] if wrt_value else [])


def _case_sil_policy(rng):
    return _policy_case(rng, sil_losses, lambda l: l.policy, False)


def _case_sil_value(rng):
    return _policy_case(rng, sil_losses, lambda l: l.value, True)


def _case_a2c_policy(rng):
    return _policy_case(rng, a2c_losses, lambda l: l.policy, False)


def _case_a2c_value(rng):
    return _policy_case(rng, a2c_losses, lambda l: l.value, True)


def _case_masked_mse(rng):
    b, d = rng.integers(1, 4), rng.integers(1, 4)
    p, tgt = _t(rng, b, d), rng.normal(size=(b, d))
    present = rng.random(b) < 0.7
    return (b, d), (lambda: masked_mse(p, tgt, present)), [p]


def _case_elementwise(rng):
    a, b = _t(rng, 3, 2), _t(rng, 3, 2, low=0.5, high=2.0)
    w = _weights(rng, (3, 2))
    f = lambda: nn.tsum((nn.tanh(a) * nn.sigmoid(b) + nn.exp(a) / b - nn.log(b) + nn.relu(a + 0.1)) * w)
    return (3, 2), f, [a, b]


def _case_shape_ops(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 2)
    w = _weights(rng, (4, 2))
    f = lambda: nn.tsum(nn.reshape(nn.transpose(nn.concat([a, b], axis=-1)), (5, 2))[1:, :] * w)
    return (2, 5), f, [a, b]


CASES: dict[str, Callable] = {
    "affine": _case_affine, "gru_cell": _case_gru, "softmax": _case_softmax, "log_softmax": _case_log_softmax,
    "multi_head_attention": _case_mha, "sil_policy_loss": _case_sil_policy, "sil_value_loss": _case_sil_value,
    "a2c_policy_loss": _case_a2c_policy,
    "a2c_value_loss": _case_a2c_value, "masked_mse": _case_masked_mse, "elementwise": _case_elementwise,
    "shape_ops": _case_shape_ops,
}


def run_gradcheck(instances: int = 20, seed: int = 0, ops=None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name in ops or CASES:
        for _ in range(instances):
            shape, fn, inputs = CASES[name](rng)
            results.append(CheckResult(name, tuple(int(s) for s in shape), check_gradients(fn, inputs)))
    return results


def summarize(results: list[CheckResult]) -> dict[str, dict]:
    out = {}
    for r in results:
        e = out.setdefault(r.op, {"instances": 0, "max_error": 0.0, "passed": True, "worst_shape": list(r.shape)})
        e["instances"] += 1
        if r.error >= e["max_error"]:
            e["max_error"], e["worst_shape"] = r.error, list(r.shape)
        e["passed"] = e["passed"] and r.passed
    return out


if __name__ == "__main__":
    t0 = time.perf_counter()
    for op, s in summarize(run_gradcheck()).items():
        print(f"{op:22s} {s['max_error']:.2e} {'ok' if s['passed'] else 'FAIL'}")
    print(f"{time.perf_counter() - t0:.1f} s")
