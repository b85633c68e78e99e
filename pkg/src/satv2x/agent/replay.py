"""Bounded replay buffer with priority-proportional sampling."""
from __future__ import annotations

import numpy as np


class PrioritizedBuffer:
    """Stores transitions as named numpy fields; sampling probability is priority / sum.

    On overflow the lowest-priority entries (old and incoming alike) are dropped,
    oldest first among equal priorities.
    """

    def __init__(self, capacity: int, eps: float = 1e-6):
        self.capacity = capacity
        self.eps = eps
        self.fields: dict[str, np.ndarray] = {}
        self.priority = np.zeros(capacity)
        self.stamp = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._clock = 0

    def __len__(self) -> int:
        return self.size

    def _alloc(self, fields: dict[str, np.ndarray]) -> None:
        self.fields = {k: np.zeros((self.capacity,) + np.asarray(v).shape[1:], dtype=np.asarray(v).dtype)
                       for k, v in fields.items()}

    def add(self, priorities: np.ndarray, **fields: np.ndarray) -> None:
        pri = np.maximum(np.asarray(priorities, float), self.eps)
        n = len(pri)
        if n == 0:
            return
        if not self.fields:
            self._alloc(fields)
        stamps = self._clock + np.arange(n)
        self._clock += n
        free = self.capacity - self.size
        if n <= free:
            slots = np.arange(self.size, self.size + n)
            take = np.arange(n)
            self.size += n
        else:
            all_pri = np.concatenate([self.priority[:self.size], pri])
            all_stamp = np.concatenate([self.stamp[:self.size], stamps])
            order = np.lexsort((all_stamp, all_pri))
            dropped = order[: self.size + n - self.capacity]
            drop_old = dropped[dropped < self.size]
            keep_new = np.setdiff1d(np.arange(n), dropped[dropped >= self.size] - self.size)
            slots = np.concatenate([np.arange(self.size, self.capacity), np.sort(drop_old)])
            take = keep_new
            self.size = self.capacity
        for k, v in fields.items():
            self.fields[k][slots] = np.asarray(v)[take]
        self.priority[slots] = pri[take]
        self.stamp[slots] = stamps[take]

    def probabilities(self) -> np.ndarray:
        p = self.priority[:self.size]
        return p / p.sum()

    def sample(self, m: int, rng: np.random.Generator) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        idx = rng.choice(self.size, size=m, replace=True, p=self.probabilities())
        return idx, {k: v[idx] for k, v in self.fields.items()}

    def update_priorities(self, idx: np.ndarray, priorities: np.ndarray) -> None:
        self.priority[idx] = np.maximum(priorities, self.eps)
