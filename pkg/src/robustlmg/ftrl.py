"""Entropy-regularized FTRL (exponential weights) over per-state action simplices."""
from __future__ import annotations

import math

import numpy as np


def ftrl_policy(cumulative_q, eta: float) -> np.ndarray:
    """Softmax of ``eta * cumulative_q`` over the last axis, max-shifted for stability."""
    z = eta * np.asarray(cumulative_q, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def eta_schedule(k: int, H: int, n_actions: int) -> float:
    """Learning rate ``sqrt(ln A / k) / H`` for the ``k``-th update (``k >= 1``)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return math.sqrt(math.log(n_actions) / k) / H


class FtrlState:
    """Cumulative gains for one agent at one step, one row per state."""

    def __init__(self, n_states: int, n_actions: int, horizon: int):
        self.cumulative = np.zeros((n_states, n_actions))
        self.horizon = horizon
        self.k = 0

    def policy(self) -> np.ndarray:
        """Current policy ``(S, A)``; uniform before any update."""
        if self.k == 0:
            return np.full_like(self.cumulative, 1.0 / self.cumulative.shape[1])
        return ftrl_policy(self.cumulative, eta_schedule(self.k + 1, self.horizon, self.cumulative.shape[1]))

    def update(self, q: np.ndarray) -> None:
        self.cumulative += q
        self.k += 1
