"""Observation featurization and per-agent observation windows."""
from __future__ import annotations

import numpy as np

from ..env import N_MODES, OBS_DIM

SINR_SCALE = 1.0 / 16.0


def featurize(obs: np.ndarray, load: np.ndarray) -> np.ndarray:
    """Map raw observation rows to NN inputs: spectral efficiency of each SINR, remaining/L."""
    sinr = np.log2(1.0 + obs[..., :N_MODES]) * SINR_SCALE
    rem = obs[..., N_MODES:] / np.asarray(load)[..., None]
    return np.concatenate([sinr, rem], axis=-1)


class ObsWindow:
    """Rolling window of the last ``size`` featurized observations per agent (oldest first)."""

    def __init__(self, n_agents: int, size: int, dim: int = OBS_DIM):
        self.buf = np.zeros((n_agents, size, dim))

    def reset(self, first: np.ndarray) -> np.ndarray:
        self.buf[:] = 0.0
        self.buf[:, -1] = first
        return self.buf.copy()

    def push(self, feats: np.ndarray) -> np.ndarray:
        self.buf = np.roll(self.buf, -1, axis=1)
        self.buf[:, -1] = feats
        return self.buf.copy()


def neighbor_targets(feats: np.ndarray, index: np.ndarray, exists: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean current observation over every in-range neighbor, shared or not.

    Returns ``(targets [I, d], has_target [I])``; agents without neighbors get zeros.
    """
    safe = np.where(exists, index, 0)
    gathered = feats[safe] * exists[..., None]
    count = exists.sum(axis=1)
    targets = gathered.sum(axis=1) / np.maximum(count, 1)[:, None]
    return targets, count > 0
