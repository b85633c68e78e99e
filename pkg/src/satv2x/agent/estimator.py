"""GRU + multi-head attention state estimator producing the enhanced observation.

The enhanced observation of an agent is ``concat(h_self, context, fingerprint)``
where ``h_self`` is the GRU encoding of the agent's own observation window and
``context`` fuses the GRU encodings of whichever neighbor windows it received.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .. import nn
from ..nn import Module, Parameter, Tensor


class EstimatorInputs(NamedTuple):
    own: np.ndarray  # [B, W, d_o]
    neighbors: np.ndarray  # [B, N, W, d_o]
    mask: np.ndarray  # [B, N] bool, which neighbor windows were received
    fingerprint: np.ndarray  # [B, 2]

    @property
    def batch(self) -> int:
        return self.own.shape[0]

    def take(self, idx) -> "EstimatorInputs":
        return EstimatorInputs(self.own[idx], self.neighbors[idx], self.mask[idx], self.fingerprint[idx])

    @staticmethod
    def cat(parts: list["EstimatorInputs"]) -> "EstimatorInputs":
        return EstimatorInputs(*(np.concatenate([getattr(p, f) for p in parts]) for f in EstimatorInputs._fields))


class Fingerprint(NamedTuple):
    train_progress: float
    exploration: float

    @staticmethod
    def at(episode: int, total: int) -> "Fingerprint":
        progress = min(max(episode / max(total, 1), 0.0), 1.0)
        return Fingerprint(progress, 1.0 - progress)


class StateEstimator(Module):
    def __init__(self, obs_dim: int, gru_hidden: int, attn_dim: int, heads: int, dropout: float,
                 rng: np.random.Generator, attention: bool = True, fingerprint: bool = True):
        self.attention = attention
        self.fingerprint = fingerprint
        self.dropout = dropout
        self.gru = nn.GRUCell(obs_dim, gru_hidden, rng)
        if attention:
            self.mha = nn.MultiHeadAttention(gru_hidden, attn_dim, heads, rng)
            self.context_dim = attn_dim
        else:
            self.context_dim = gru_hidden
        # used whenever no neighbor window was received
        self.default_context = Parameter(np.zeros(self.context_dim))
        self.gru_hidden = gru_hidden
        self.out_dim = gru_hidden + self.context_dim + (2 if fingerprint else 0)

    def __call__(self, x: EstimatorInputs, rng: np.random.Generator | None = None,
                 neighbor_rows: np.ndarray | None = None):
        """Return ``(enhanced_obs [B, out_dim], attention weights [B, H, N] or None)``.

        ``neighbor_rows[b, n]`` may name the batch row whose own window equals
        that neighbor's window (all agents of one step); the GRU then runs once
        per agent instead of once per received window.
        """
        B, N = x.mask.shape
        flat_mask = x.mask.reshape(-1)
        present = np.flatnonzero(flat_mask)
        w, d = x.own.shape[1:]
        if neighbor_rows is None:
            seqs = np.concatenate([x.own, x.neighbors.reshape(B * N, w, d)[present]], axis=0)
            rows = B + np.arange(len(present))
        else:
            seqs = x.own
            rows = neighbor_rows.reshape(-1)[present]
        hidden = self.gru.encode(Tensor(seqs))
        h_self = hidden[:B] if neighbor_rows is None else hidden
        has = x.mask.any(axis=1)
        alpha = None
        if len(present):
            pos = np.full(B * N, len(seqs), dtype=np.int64)
            pos[present] = rows
            padded = nn.concat([hidden, Tensor(np.zeros((1, self.gru_hidden)))], axis=0)
            nbr = nn.take_rows(padded, pos.reshape(B, N))  # [B, N, d_h]
            if self.attention:
                ctx, alpha = self.mha(h_self, nbr, x.mask)
            else:
                count = np.maximum(x.mask.sum(axis=1), 1)[:, None]
                ctx = nn.tsum(nbr, axis=1) * (1.0 / count)
            hf = has[:, None].astype(float)
            ctx = ctx * hf + nn.mul(self.default_context, 1.0 - hf)
        else:
            ctx = nn.mul(self.default_context, np.ones((B, 1)))
        ctx = nn.dropout(ctx, self.dropout, rng, self.training)
        parts = [h_self, ctx]
        if self.fingerprint:
            parts.append(Tensor(x.fingerprint))
        return nn.concat(parts, axis=-1), alpha


def estimate_state(estimator: StateEstimator, own_window: np.ndarray, neighbor_windows: list[np.ndarray],
                   fingerprint: Fingerprint) -> np.ndarray:
    """Single-agent enhanced observation from its own window and a variable-length neighbor list."""
    w, d = own_window.shape
    n = max(len(neighbor_windows), 1)
    nb = np.zeros((1, n, w, d))
    mask = np.zeros((1, n), bool)
    for j, win in enumerate(neighbor_windows):
        nb[0, j] = win
        mask[0, j] = True
    x = EstimatorInputs(own_window[None], nb, mask, np.asarray(fingerprint, float)[None])
    with nn.no_grad():
        out, _ = estimator(x)
    return out.data[0]
