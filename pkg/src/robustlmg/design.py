"""Finite-support sampling designs with bounded feature leverage.

:func:`optimal_design` returns a distribution ``rho`` over a finite subset of
the feature list such that every feature has ``||phi||^2_{Sigma^-1}`` at most
about ``d`` (D-optimal design via Frank-Wolfe with away steps; by the
Kiefer-Wolfowitz equivalence the maximal leverage certifies optimality).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalValidationError, ValidationError

PRUNE_THRESHOLD = 1e-6


@dataclass(frozen=True)
class DesignResult:
    support: np.ndarray  # indices into the feature list
    rho: np.ndarray
    second_moment: np.ndarray
    max_leverage: float
    iterations: int = 0

    def to_dict(self, pairs=None) -> dict:
        support = [list(map(int, pairs[j])) for j in self.support] if pairs is not None else self.support.tolist()
        return {"support": support, "rho": self.rho.tolist(), "max_leverage": self.max_leverage}


def leverages(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """``x^T M^-1 x`` for every row of ``X``."""
    return np.einsum("ij,ij->i", X, np.linalg.solve(M, X.T).T)


def _greedy_basis(X: np.ndarray, tol: float = 1e-10) -> list[int]:
    """Pick ``d`` rows by greedy volume (largest residual after projection)."""
    d = X.shape[1]
    R = X.copy()
    chosen: list[int] = []
    scale = max(np.linalg.norm(X, axis=1).max(), 1e-300)
    for _ in range(d):
        norms = np.linalg.norm(R, axis=1)
        j = int(np.argmax(norms))
        if norms[j] <= tol * scale:
            raise ValidationError(
                "feature set is not full-dimensional; reduce the feature dimension"
            )
        chosen.append(j)
        u = R[j] / norms[j]
        R = R - np.outer(R @ u, u)
    return chosen


def _caratheodory(X: np.ndarray, w: np.ndarray, limit: int) -> np.ndarray:
    """Shrink the support of ``w`` to ``limit`` points keeping ``sum w x x^T`` fixed.

    Each move follows a null direction of the moment map oriented so that
    ``sum w`` does not grow; renormalizing afterwards can only lower leverages.
    """
    d = X.shape[1]
    iu = np.triu_indices(d)
    w = w.copy()
    while True:
        supp = np.flatnonzero(w > 0)
        if len(supp) <= limit:
            return w
        A = np.einsum("ni,nj->nij", X[supp], X[supp])[:, iu[0], iu[1]].T
        _, sv, vt = np.linalg.svd(A)
        rank = int((sv > 1e-12 * sv[0]).sum())
        if rank >= len(supp):
            return w
        z = vt[-1]
        if z.sum() < 0 or (z.sum() == 0 and z.max() <= 0):
            z = -z
        pos = z > 1e-15
        t = np.min(w[supp][pos] / z[pos])
        w[supp] = w[supp] - t * z
        w[np.abs(w) < 1e-15] = 0.0
        w = np.clip(w, 0.0, None)


def optimal_design(features, tolerance: float = 0.05, max_iter: int = 100_000) -> DesignResult:
    """Approximate D-/G-optimal design over the rows of ``features`` (shape ``(m, d)``).

    Stops once ``max_leverage <= (1 + tolerance) d``; the support is then
    pruned to at most ``d (d + 1) / 2`` points and the bound re-verified.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValidationError("features must be an (m, d) array")
    m, d = X.shape
    limit = d * (d + 1) // 2
    basis = _greedy_basis(X)

    w = np.zeros(m)
    w[basis] = 1.0 / d
    target = (1 + tolerance) * d
    it = 0
    for it in range(1, max_iter + 1):
        M = X.T @ (w[:, None] * X)
        g = leverages(X, M)
        j_up = int(np.argmax(g))
        if g[j_up] <= target:
            break
        supp = np.flatnonzero(w > 0)
        j_dn = int(supp[np.argmin(g[supp])])
        eps_up = g[j_up] / d - 1
        eps_dn = 1 - g[j_dn] / d
        if eps_up >= eps_dn:
            tau = (g[j_up] - d) / (d * (g[j_up] - 1))
            w *= 1 - tau
            w[j_up] += tau
        else:
            # away step: drop mass from the least useful support point
            cap = w[j_dn] / (1 - w[j_dn])
            gj = g[j_dn]
            tau = cap if gj <= 1 else min(cap, (d - gj) / (d * (gj - 1)))
            w *= 1 + tau
            w[j_dn] -= tau
            if w[j_dn] < 1e-15:
                w[j_dn] = 0.0
    else:
        raise NumericalValidationError(f"design did not converge in {max_iter} iterations")

    w[w < PRUNE_THRESHOLD] = 0.0
    w /= w.sum()
    w = _caratheodory(X, w, limit)
    if np.count_nonzero(w) > limit:
        keep = np.argsort(-w, kind="stable")[:limit]
        trimmed = np.zeros_like(w)
        trimmed[keep] = w[keep]
        w = trimmed
    w /= w.sum()

    support = np.flatnonzero(w > 0)
    rho = w[support]
    M = X[support].T @ (rho[:, None] * X[support])
    lev = float(leverages(X, M).max())
    if lev > (1 + 2 * tolerance) * d:
        raise NumericalValidationError(f"pruned design leverage {lev:.4f} exceeds bound")
    return DesignResult(support, rho, M, lev, it)


def allocate_samples(design: DesignResult, N: int) -> np.ndarray:
    """``ceil(N * rho)`` queries per support point."""
    return np.array([math.ceil(N * r - 1e-12) for r in design.rho], dtype=int)


def design_for_agent(game, i: int, tolerance: float = 0.05) -> tuple[DesignResult, np.ndarray]:
    """Design over agent ``i``'s ``(s, a_i)`` features; also returns the pair list."""
    S, A = game.dims.n_states, game.dims.actions[i]
    pairs = np.array([(s, a) for s in range(S) for a in range(A)])
    return optimal_design(game.features[i].reshape(S * A, -1), tolerance), pairs
