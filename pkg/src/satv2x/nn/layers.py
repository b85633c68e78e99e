"""Layers used by the state estimator and the actor/critic heads."""
from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Parameter,
    Tensor,
    _count,
    _sigmoid,
    as_tensor,
    concat,
    make_node,
    matmul,
    reshape,
    softmax,
    transpose,
)


class DimensionError(ValueError):
    pass


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Module:
    """Minimal parameter container: Parameters and sub-Modules found on attributes."""

    training = False

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(prefix + key + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def train(self, mode: bool = True) -> "Module":
        for val in vars(self).values():
            if isinstance(val, Module):
                val.train(mode)
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def affine(x, W: Parameter, b: Parameter | None = None) -> Tensor:
    """``W x + b`` on the last axis of ``x`` (rows are samples)."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[1] or (b is not None and b.shape != (W.shape[0],)):
        raise DimensionError(f"affine: x {x.shape}, W {W.shape}, b {None if b is None else b.shape}")
    xd = x.data
    out = xd @ W.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ W.data
        gW = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g.reshape(-1, g.shape[-1]).sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    _count("affine", 2 * out.size * W.shape[1])
    return make_node(out, parents, bw, "affine")


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = Parameter(xavier_uniform(rng, n_out, n_in))
        self.b = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return affine(x, self.W, self.b)


# ---------------------------------------------------------------- GRU

def _gru_forward_np(x, h, W, U, b):
    d = h.shape[-1]
    gx = x @ W.T + b
    gh = h @ U[: 2 * d].T
    z = _sigmoid(gx[..., :d] + gh[..., :d])
    r = _sigmoid(gx[..., d:2 * d] + gh[..., d:])
    rh = r * h
    n = np.tanh(gx[..., 2 * d:] + rh @ U[2 * d:].T)
    h_new = (1.0 - z) * h + z * n
    return h_new, (z, r, n, rh)


def _gru_cell_backward(g, x, h, W, U, cache):
    z, r, n, rh = cache
    d = h.shape[-1]
    dz = g * (n - h)
    dn = g * z
    dh = g * (1.0 - z)
    dn_pre = dn * (1.0 - n * n)
    dz_pre = dz * z * (1.0 - z)
    drh = dn_pre @ U[2 * d:]
    dr_pre = drh * h * r * (1.0 - r)
    dh = dh + drh * r
    dgates = np.concatenate([dz_pre, dr_pre, dn_pre], axis=-1)
    dx = dgates @ W
    dh = dh + dz_pre @ U[:d] + dr_pre @ U[d:2 * d]
    g2 = dgates.reshape(-1, 3 * d)
    dW = g2.T @ x.reshape(-1, x.shape[-1])
    h2 = h.reshape(-1, d)
    dU = np.concatenate([
        dz_pre.reshape(-1, d).T @ h2,
        dr_pre.reshape(-1, d).T @ h2,
        dn_pre.reshape(-1, d).T @ rh.reshape(-1, d),
    ], axis=0)
    db = g2.sum(axis=0)
    return dx, dh, dW, dU, db


def gru_cell(x, h_prev, W: Parameter, U: Parameter, b: Parameter) -> Tensor:
    """One GRU step with gates stacked as [update z, reset r, candidate n].

    ``h' = (1 - z) * h + z * tanh(W_n x + U_n (r * h) + b_n)``. ``W`` is
    ``[3 d_h, d_o]``, ``U`` is ``[3 d_h, d_h]``, ``b`` is ``[3 d_h]``.
    """
    x, h_prev = as_tensor(x), as_tensor(h_prev)
    d = h_prev.shape[-1]
    if W.shape != (3 * d, x.shape[-1]) or U.shape != (3 * d, d) or b.shape != (3 * d,):
        raise DimensionError(f"gru_cell: x {x.shape}, h {h_prev.shape}, W {W.shape}, U {U.shape}")
    h_new, cache = _gru_forward_np(x.data, h_prev.data, W.data, U.data, b.data)

    def bw(g):
        # looked up at call time so tests can swap in a corrupted backward
        return globals()["_gru_cell_backward"](g, x.data, h_prev.data, W.data, U.data, cache)

    _count("gru_cell", 6 * h_new.size * (W.shape[1] + d))
    return make_node(h_new, (x, h_prev, W, U, b), bw, "gru_cell")


class GRUCell(Module):
    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.d_hidden = d_hidden
        self.W = Parameter(np.concatenate([xavier_uniform(rng, d_hidden, d_in) for _ in range(3)]))
        self.U = Parameter(np.concatenate([xavier_uniform(rng, d_hidden, d_hidden) for _ in range(3)]))
        self.b = Parameter(np.zeros(3 * d_hidden))

    def __call__(self, x, h) -> Tensor:
        return gru_cell(x, h, self.W, self.U, self.b)

    def encode(self, seq) -> Tensor:
        """Run over ``seq`` of shape [..., steps, d_in] from a zero state."""
        seq = as_tensor(seq)
        h = Tensor(np.zeros(seq.shape[:-2] + (self.d_hidden,)))
        for t in range(seq.shape[-2]):
            h = self(seq[..., t, :], h)
        return h


# ---------------------------------------------------------------- attention

def multi_head_attention(query, neighbors, Wq: Parameter, Wk: Parameter, Wv: Parameter,
                         Wo: Parameter, n_heads: int, mask: np.ndarray | None = None):
    """Scaled dot-product attention of one query state over its neighbor states.

    query: [..., d_in]; neighbors: [..., N, d_in]; mask: [..., N] bool.
    Returns ``(context [..., d_model], weights [..., H, N])``. A row with no
    unmasked neighbor yields a zero context; callers substitute a default.
    """
    query, neighbors = as_tensor(query), as_tensor(neighbors)
    d_model = Wq.shape[0]
    if d_model % n_heads:
        raise DimensionError(f"d_model {d_model} not divisible by {n_heads} heads")
    if neighbors.shape[-2] == 0:
        raise DimensionError("empty neighbor list; substitute the default context")
    d_k = d_model // n_heads
    batch = query.shape[:-1]
    n = neighbors.shape[-2]
    q = reshape(affine(query, Wq), batch + (n_heads, 1, d_k))
    k = transpose(reshape(affine(neighbors, Wk), batch + (n, n_heads, d_k)),
                  tuple(range(len(batch))) + tuple(len(batch) + i for i in (1, 2, 0)))
    v = transpose(reshape(affine(neighbors, Wv), batch + (n, n_heads, d_k)),
                  tuple(range(len(batch))) + tuple(len(batch) + i for i in (1, 0, 2)))
    logits = matmul(q, k) * (1.0 / math.sqrt(d_k))
    head_mask = None if mask is None else np.asarray(mask, bool)[..., None, None, :]
    alpha = softmax(logits, axis=-1, mask=head_mask)
    ctx = reshape(matmul(alpha, v), batch + (d_model,))
    out = affine(ctx, Wo)
    return out, reshape(alpha, batch + (n_heads, n))


class MultiHeadAttention(Module):
    def __init__(self, d_in: int, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise DimensionError(f"d_model {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.Wq = Parameter(xavier_uniform(rng, d_model, d_in))
        self.Wk = Parameter(xavier_uniform(rng, d_model, d_in))
        self.Wv = Parameter(xavier_uniform(rng, d_model, d_in))
        self.Wo = Parameter(xavier_uniform(rng, d_model, d_model))

    def __call__(self, query, neighbors, mask=None):
        return multi_head_attention(query, neighbors, self.Wq, self.Wk, self.Wv, self.Wo,
                                    self.n_heads, mask)


__all__ = [
    "DimensionError", "Module", "Linear", "GRUCell", "MultiHeadAttention",
    "affine", "gru_cell", "multi_head_attention", "xavier_uniform", "concat",
]
