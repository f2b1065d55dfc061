"""Total-variation robust operators and exact dynamic-programming oracles.

The inner problem ``inf { P'.V : P' in simplex, TV(P', P) <= sigma }`` is
solved through its one-dimensional dual

    max_{alpha in [min V, max V]}  P.[V]_alpha - sigma * (alpha - min_s [V]_alpha(s)),

which is piecewise linear in ``alpha`` with kinks at the values of ``V`` on
the support of ``P``.  Maximizing over those kinks plus the interval
endpoints is therefore exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericalValidationError, ValidationError
from .game import GameInstance, PolicyMixture, marginal_tables


@dataclass(frozen=True)
class SignedMeasure:
    """Finitely supported (possibly signed) measure over state indices."""

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if support.shape != weights.shape:
            raise ValidationError("support and weights must have equal length")
        if len(np.unique(support)) != len(support):
            raise ValidationError("support indices must be distinct")
        if not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def dense(self, n_states: int) -> np.ndarray:
        out = np.zeros(n_states)
        out[self.support] = self.weights
        return out


def clip_value(V, alpha: float) -> np.ndarray:
    """Pointwise ``min(V, alpha)``."""
    return np.minimum(np.asarray(V, dtype=float), alpha)


def _check_sigma(sigma: float) -> None:
    if not 0.0 <= sigma <= 1.0:
        raise ValidationError(f"sigma must lie in [0, 1], got {sigma}")


def tv_dual_argmax(P, V, sigma: float) -> tuple[float, float]:
    """Return ``(dual value, maximizing alpha)``; ties go to the smallest alpha."""
    _check_sigma(sigma)
    V = np.asarray(V, dtype=float)
    if isinstance(P, SignedMeasure):
        if P.support.size == 0:
            raise ValidationError("dual over an empty support")
        supp, w = P.support, P.weights
    else:
        w_full = np.asarray(P, dtype=float)
        if w_full.shape != V.shape:
            raise ValidationError("P and V must have the same length")
        supp = np.flatnonzero(w_full)
        if supp.size == 0:
            raise ValidationError("dual over an empty support")
        w = w_full[supp]
    vmin, vmax = V.min(), V.max()
    cands = np.unique(np.concatenate([V[supp], [vmin, vmax]]))
    vals = np.minimum(V[supp][None, :], cands[:, None]) @ w - sigma * (cands - vmin)
    best = int(np.argmax(vals))
    return float(vals[best]), float(cands[best])


def tv_dual_inf(P, V, sigma: float) -> float:
    """Worst-case expectation of ``V`` over the TV ball of radius ``sigma`` around ``P``.

    ``P`` is a dense vector over states or a :class:`SignedMeasure`.  For a
    probability vector this equals the primal infimum exactly; signed
    measures from ridge regression are passed through unchanged.
    """
    return tv_dual_argmax(P, V, sigma)[0]


def tv_dual_batch(P: np.ndarray, V, sigma: float) -> np.ndarray:
    """Vectorized dual over the last axis of ``P`` (shape ``(..., S)``).

    Every state value is used as a candidate threshold.  Extra candidates lie
    on linear pieces of the objective, so the maximum is unchanged; an
    all-zero row yields 0 (the zero-measure convention).
    """
    _check_sigma(sigma)
    V = np.asarray(V, dtype=float)
    vmin = V.min()
    cands = np.unique(V)
    clipped = np.minimum(V[None, :], cands[:, None])  # (C, S)
    vals = np.asarray(P, dtype=float) @ clipped.T - sigma * (cands - vmin)
    return vals.max(axis=-1)


def tv_worst_case_kernel(P, V, sigma: float) -> np.ndarray:
    """Minimizer of ``P'.V`` over the TV ball around the distribution ``P``.

    Mass ``min(sigma, 1 - P(s*))`` moves onto the lowest-index minimizer
    ``s*`` of ``V``, taken from the highest-valued states first (ties: highest
    index first).  A constant ``V`` returns ``P`` unchanged.
    """
    _check_sigma(sigma)
    P = np.asarray(P, dtype=float)
    V = np.asarray(V, dtype=float)
    if P.min() < -1e-12 or abs(P.sum() - 1) > 1e-9:
        raise ValidationError("worst-case kernel needs a probability vector")
    out = np.clip(P, 0.0, None)
    if V.max() == V.min() or sigma == 0.0:
        return out
    target = int(np.argmin(V))
    # descending V, ties broken by descending index
    order = np.lexsort((-np.arange(len(V)), -V))
    budget = min(sigma, 1.0 - out[target])
    for s in order:
        if budget <= 0:
            break
        if s == target:
            continue
        take = min(out[s], budget)
        if out[s] - take <= 1e-15:
            take = out[s]  # drain fully, no rounding residue
        out[s] -= take
        out[target] += take
        budget -= take
    return out


def robust_q_backup(r: float, P, V_next, sigma: float) -> float:
    return float(r) + tv_dual_inf(P, V_next, sigma)


# -- exact oracles on the ground-truth game ---------------------------

def _step_q(game: GameInstance, mix: PolicyMixture, i: int, h: int, V_next: np.ndarray):
    """Robust q-values ``(K, S, A_i)`` for every slice at step ``h``."""
    P, r = marginal_tables(game, i, h, mix.step(h))
    return r + tv_dual_batch(P, V_next, float(game.sigma[i]))


def _check_range(V: np.ndarray, h: int, H: int, what: str) -> None:
    hi = H - h
    if V.min() < -1e-9 or V.max() > hi + 1e-9:
        raise NumericalValidationError(f"{what} at step {h} left [0, {hi}]")


def robust_policy_eval(game: GameInstance, mixture: PolicyMixture, i: int) -> np.ndarray:
    """Robust value table ``(H + 1, S)`` of agent ``i`` under the per-step mixture.

    ``V[h](s) = 1/K sum_k E_{a ~ pi^k_i}[ r^k(s, a) + dual(P^k(s, a), V[h + 1]) ]``
    with ``P^k``, ``r^k`` the true kernel and reward marginalized over slice
    ``k``'s opponents; ``V[H] = 0``.
    """
    H, S = game.dims.horizon, game.dims.n_states
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        q = _step_q(game, mixture, i, h, V[h + 1])
        V[h] = np.einsum("ksa,ksa->s", mixture.policies[i][h], q) / mixture.n_slices
        _check_range(V[h], h, H, "robust value")
    return V


def robust_best_response(game: GameInstance, mixture: PolicyMixture, i: int):
    """Best-response values ``(H + 1, S)`` and greedy deterministic policy ``(H, S)``."""
    H, S = game.dims.horizon, game.dims.n_states
    V = np.zeros((H + 1, S))
    greedy = np.zeros((H, S), dtype=int)
    for h in range(H - 1, -1, -1):
        q = _step_q(game, mixture, i, h, V[h + 1]).mean(axis=0)
        greedy[h] = np.argmax(q, axis=1)
        V[h] = q.max(axis=1)
        _check_range(V[h], h, H, "best-response value")
    return V, greedy


@dataclass(frozen=True)
class GapReport:
    per_agent: np.ndarray  # (n,) max over the evaluated states
    per_state: np.ndarray  # (n, S) gap at h = 0
    best_response: np.ndarray  # (n, S)
    policy_value: np.ndarray  # (n, S)

    @property
    def max_gap(self) -> float:
        return float(self.per_agent.max())


def _gap_tables(game: GameInstance, mixture: PolicyMixture, semantics: str):
    n = game.dims.n_agents
    if semantics == "per_step":
        slices = [mixture]
    elif semantics == "draw":
        slices = [mixture.slice(k) for k in range(mixture.n_slices)]
    else:
        raise ValidationError(f"unknown gap semantics {semantics!r}")
    vstar = np.zeros((n, game.dims.n_states))
    vpi = np.zeros_like(vstar)
    for m in slices:
        for i in range(n):
            vstar[i] += robust_best_response(game, m, i)[0][0]
            vpi[i] += robust_policy_eval(game, m, i)[0]
    return vstar / len(slices), vpi / len(slices)


def cce_gap(
    game: GameInstance,
    mixture: PolicyMixture,
    s1: Optional[int] = None,
    semantics: str = "per_step",
) -> GapReport:
    """Robust CCE gap of ``mixture``.

    ``semantics="per_step"`` evaluates the per-step aggregated recursion;
    ``semantics="draw"`` treats the mixture as a uniform draw of one slice
    index used at every step, and averages exact per-policy gaps.  With
    ``s1`` given, only that initial state is scored.
    """
    vstar, vpi = _gap_tables(game, mixture, semantics)
    per_state = vstar - vpi
    scored = per_state if s1 is None else per_state[:, [s1]]
    return GapReport(scored.max(axis=1), per_state, vstar, vpi)


def tv_worst_case_table(P: np.ndarray, V, sigma: float) -> np.ndarray:
    """:func:`tv_worst_case_kernel` applied to every row of ``P`` (shape ``(..., S)``)."""
    P = np.asarray(P, dtype=float)
    flat = P.reshape(-1, P.shape[-1])
    out = np.stack([tv_worst_case_kernel(row, V, sigma) for row in flat])
    return out.reshape(P.shape)
