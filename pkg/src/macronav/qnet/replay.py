"""Fixed-capacity ring buffer of transitions."""

from __future__ import annotations

import numpy as np

from .network import Transition


class ReplayBuffer:
    def __init__(self, capacity: int = 10_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        n = min(n, len(self._items))
        return rng.choice(len(self._items), size=n, replace=False)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        return [self._items[int(i)] for i in self.sample_indices(n, rng)]
