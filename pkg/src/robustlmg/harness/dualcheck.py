"""Linear-programming reference for the TV-ball infimum."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from ..robust import tv_dual_inf, tv_worst_case_kernel


def tv_ball_lp(P: np.ndarray, V: np.ndarray, sigma: float) -> float:
    """``min Q.V`` over distributions with ``0.5 ||Q - P||_1 <= sigma``.

    Variables are ``Q`` and slacks ``u >= |Q - P|``.
    """
    S = len(P)
    c = np.concatenate([V, np.zeros(S)])
    eye = np.eye(S)
    A_ub = np.block([[eye, -eye], [-eye, -eye], [np.zeros((1, S)), 0.5 * np.ones((1, S))]])
    b_ub = np.concatenate([P, -P, [sigma]])
    A_eq = np.concatenate([np.ones(S), np.zeros(S)])[None]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (2 * S), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if not res.success:
        raise RuntimeError(f"LP failed: {res.message}")
    return float(res.fun)


def random_instance(rng: np.random.Generator, max_states: int, horizon: float):
    S = int(rng.integers(1, max_states + 1))
    P = rng.dirichlet(np.ones(S))
    if rng.random() < 0.3:
        P[rng.random(S) < 0.4] = 0.0
        if P.sum() == 0:
            P[0] = 1.0
        P /= P.sum()
    V = rng.random(S) * horizon
    if rng.random() < 0.2:
        V = np.round(V)  # ties
    sigma = float(rng.random())
    return P, V, sigma


def check_instance(P, V, sigma) -> dict:
    lp = tv_ball_lp(P, V, sigma)
    dual = tv_dual_inf(P, V, sigma)
    Q = tv_worst_case_kernel(P, V, sigma)
    return {
        "dual_err": abs(dual - lp),
        "kernel_err": abs(float(Q @ V) - lp),
        "tv": 0.5 * float(np.abs(Q - P).sum()),
        "in_ball": bool(0.5 * np.abs(Q - P).sum() <= sigma + 1e-12 and Q.min() >= 0 and abs(Q.sum() - 1) <= 1e-12),
    }
