"""Ridge-regression estimates of rewards and transition kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ValidationError
from .robust import SignedMeasure


@dataclass(frozen=True)
class Dataset:
    """Transitions ``(s, a_i, r, s')`` collected at one step for one agent."""

    agent: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __post_init__(self):
        cols = [np.asarray(c).reshape(-1) for c in (self.states, self.actions, self.rewards, self.next_states)]
        if len({len(c) for c in cols}) != 1:
            raise ValidationError("dataset columns must have equal length")
        object.__setattr__(self, "states", cols[0].astype(int))
        object.__setattr__(self, "actions", cols[1].astype(int))
        object.__setattr__(self, "rewards", cols[2].astype(float))
        object.__setattr__(self, "next_states", cols[3].astype(int))

    def __len__(self) -> int:
        return len(self.states)

    @classmethod
    def empty(cls, agent: int) -> "Dataset":
        z = np.zeros(0)
        return cls(agent, z, z, z, z)


class GramMatrix:
    """``Lambda = sum phi phi^T + lam I`` with a cached Cholesky factor."""

    def __init__(self, matrix: np.ndarray, lam: float):
        self.matrix = np.asarray(matrix, dtype=float)
        self.lam = float(lam)
        self._factor = cho_factor(self.matrix, lower=True)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, b)

    def width(self, phi: np.ndarray) -> np.ndarray:
        """Elliptical norm ``sqrt(phi^T Lambda^-1 phi)`` over the last axis."""
        phi = np.asarray(phi, dtype=float)
        flat = phi.reshape(-1, phi.shape[-1])
        quad = np.einsum("ij,ji->i", flat, self.solve(flat.T))
        return np.sqrt(np.clip(quad, 0.0, None)).reshape(phi.shape[:-1])


def bonus_width(phi, gram: GramMatrix) -> float:
    return float(gram.width(np.asarray(phi, dtype=float)))


@dataclass(frozen=True)
class RewardEstimate:
    theta: np.ndarray

    def __call__(self, phi: np.ndarray) -> np.ndarray:
        return np.asarray(phi) @ self.theta


@dataclass(frozen=True)
class TransitionEstimate:
    """``P_hat(.|s, a) = phi(s, a)^T Lambda^-1 sum_m phi_m delta_{s'_m}``.

    Duplicate next states are merged: ``coef[:, c]`` holds
    ``Lambda^-1 sum_{m: s'_m = support[c]} phi_m``.
    """

    support: np.ndarray
    coef: np.ndarray  # (d, |support|)

    def measure(self, phi: np.ndarray) -> SignedMeasure:
        return SignedMeasure(self.support, np.asarray(phi) @ self.coef)

    def dense(self, phi: np.ndarray, n_states: int) -> np.ndarray:
        """Dense weights over all states, shape ``phi.shape[:-1] + (S,)``."""
        phi = np.asarray(phi)
        out = np.zeros(phi.shape[:-1] + (n_states,))
        out[..., self.support] = phi @ self.coef
        return out


def fit(dataset: Dataset, features: np.ndarray, lam: float = 1.0):
    """Ridge fit on ``dataset`` with the agent's feature table ``(S, A_i, d)``.

    Returns ``(GramMatrix, RewardEstimate, TransitionEstimate)``.  An empty
    dataset yields ``Lambda = lam I``, ``theta = 0`` and the zero measure.
    """
    if lam < 1:
        raise ValidationError(f"ridge parameter must be >= 1, got {lam}")
    features = np.asarray(features, dtype=float)
    d = features.shape[-1]
    Phi = features[dataset.states, dataset.actions] if len(dataset) else np.zeros((0, d))
    gram = GramMatrix(Phi.T @ Phi + lam * np.eye(d), lam)
    theta = gram.solve(Phi.T @ dataset.rewards) if len(dataset) else np.zeros(d)

    support, inverse = np.unique(dataset.next_states, return_inverse=True)
    B = np.zeros((d, len(support)))
    np.add.at(B.T, inverse, Phi)
    coef = gram.solve(B) if len(support) else B
    return gram, RewardEstimate(theta), TransitionEstimate(support, coef)


def estimate_tables(dataset: Dataset, features: np.ndarray, n_states: int, lam: float = 1.0):
    """Dense ``r_hat (S, A)``, ``P_hat (S, A, S)`` and widths ``(S, A)`` from one fit."""
    gram, rew, trans = fit(dataset, features, lam)
    return rew(features), trans.dense(features, n_states), gram.width(features), gram
