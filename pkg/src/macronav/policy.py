"""Macro-action selection: Boltzmann exploration with an unexplored bonus, else greedy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyActionSet, InvalidConfig


@dataclass
class PolicyConfig:
    epsilon: float = 0.3
    temperature: float = 1.0
    bonus_q: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidConfig(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.temperature <= 0.0:
            raise InvalidConfig("temperature must be positive")
        if self.bonus_q <= 0.0:
            raise InvalidConfig("bonus_q must be positive")


def boltzmann_probs(qvals: Sequence[float], unexplored: Sequence[bool], temperature: float, bonus: float) -> np.ndarray:
    """Softmax of ``(Q + bonus * unexplored) / T`` with max subtraction."""
    q = np.asarray(qvals, dtype=np.float64)
    if q.size == 0:
        raise EmptyActionSet("no actions to rate")
    flags = np.asarray(unexplored, dtype=bool)
    if flags.shape != q.shape:
        raise ValueError("qvals and unexplored flags differ in length")
    z = (q + bonus * flags) / temperature
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def greedy_choice(qvals: Sequence[float], node_ids: Sequence[int], current: Optional[int] = None) -> int:
    """Highest-Q node, skipping ``current`` when anything else is available."""
    if len(node_ids) == 0:
        raise EmptyActionSet("no actions to choose from")
    order = sorted(range(len(node_ids)), key=lambda i: (-float(qvals[i]), node_ids[i]))
    best = node_ids[order[0]]
    if best == current and len(order) > 1:
        return node_ids[order[1]]
    return best


def select_action(
    qvals: Sequence[float],
    unexplored: Sequence[bool],
    node_ids: Sequence[int],
    current: Optional[int],
    cfg: PolicyConfig,
    rng: np.random.Generator,
) -> int:
    """Explore with probability epsilon (Boltzmann draw), otherwise act greedily."""
    if len(node_ids) == 0:
        raise EmptyActionSet("no actions to choose from")
    if len(qvals) != len(node_ids):
        raise ValueError("qvals and node_ids differ in length")
    if rng.random() < cfg.epsilon:
        p = boltzmann_probs(qvals, unexplored, cfg.temperature, cfg.bonus_q)
        return node_ids[int(rng.choice(len(node_ids), p=p))]
    return greedy_choice(qvals, node_ids, current)
