"""Robust Q-learning with FTRL from a generative model.

Steps are processed backwards.  At each step every agent runs ``K`` FTRL
iterations; iteration ``k`` queries the nominal model on the agent's design
points (opponents playing their current policies), fits a ridge model, and
backs up robust q-values through the TV dual against the optimistic value
estimate of the next step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .design import DesignResult, allocate_samples, design_for_agent
from .errors import ConfigError, NumericalValidationError
from .estimation import Dataset, estimate_tables
from .ftrl import FtrlState
from .game import GameInstance, PolicyMixture, PolicyProfile
from .rng import categorical, substream
from .robust import tv_dual_batch


@dataclass(frozen=True)
class GenerativeConfig:
    N: int
    K: int
    delta: float = 0.1
    lam: float = 1.0
    seed: int = 0
    bonus_scale: float = 1.0
    design_tolerance: float = 0.05

    def __post_init__(self):
        if self.N < 1 or self.K < 1:
            raise ConfigError("N and K must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.lam < 1:
            raise ConfigError("lam must be >= 1")
        if self.bonus_scale < 0:
            raise ConfigError("bonus_scale must be nonnegative")


def beta_generative(d_eff: float, N: int, H: int, K: int, n: int, delta: float, A_i: int, d: int) -> float:
    """Optimism bonus added to the averaged q-values."""
    log_term = d * math.log(N * H + 1) + 2 * math.log(3 * K * N * H * n / delta)
    stat = 8 * math.sqrt(d_eff / N) * (2 * H * math.sqrt(log_term) + H * math.sqrt(d))
    return stat + 2 * H * math.sqrt(math.log(A_i) / K)


def _opponent_step(profile, h: int):
    if isinstance(profile, PolicyProfile):
        return profile.step(h)
    return tuple(np.asarray(p, dtype=float) for p in profile)


def sample_design_batch(
    game: GameInstance,
    i: int,
    h: int,
    profile,
    design: DesignResult,
    pairs: np.ndarray,
    N: int,
    rng: np.random.Generator,
) -> Dataset:
    """Query the nominal model ``ceil(N rho)`` times at each design point.

    ``profile`` is a :class:`PolicyProfile` or a per-agent sequence of
    step-``h`` policies ``(S, A_j)``; agent ``i``'s action is fixed by the
    design point and the opponents sample from their policies.
    """
    counts = allocate_samples(design, N)
    pts = pairs[design.support]
    s = np.repeat(pts[:, 0], counts)
    a_i = np.repeat(pts[:, 1], counts)
    steps = _opponent_step(profile, h)
    dims = game.dims
    joint = np.zeros(len(s), dtype=int)
    for j in range(dims.n_agents):
        a_j = a_i if j == i else categorical(rng, steps[j][s])
        joint = joint * dims.actions[j] + a_j
    s_next = categorical(rng, game.kernel[h, s, joint])
    return Dataset(i, s, a_i, game.reward[i, h, s, joint], s_next)


@dataclass
class GenerativeResult:
    mixture: PolicyMixture
    v_hat: np.ndarray  # (n, H + 1, S)
    beta: np.ndarray  # (n,)
    q_min: np.ndarray  # (H, K, n, S)
    q_max: np.ndarray
    q_avg: np.ndarray  # (n, H, S) averaged q before the bonus
    total_queries: int
    designs: list = field(default_factory=list)
    q_tables: Optional[list] = None  # per agent (H, K, S, A_i) when recorded

    def diagnostics_rows(self):
        """Rows ``(h, k, i, s, v_hat, beta, q_min, q_max)`` with 1-based step and iteration."""
        H, K, n, S = self.q_min.shape
        for h in range(H):
            for k in range(K):
                for i in range(n):
                    for s in range(S):
                        yield (h + 1, k + 1, i, s, float(self.v_hat[i, h, s]), float(self.beta[i]),
                               float(self.q_min[h, k, i, s]), float(self.q_max[h, k, i, s]))


def run_generative(game: GameInstance, config: GenerativeConfig, designs=None, record_q: bool = False) -> GenerativeResult:
    """Run the generative-model learner; returns the output mixture and diagnostics.

    ``designs`` may supply precomputed ``(DesignResult, pairs)`` per agent.
    """
    dims = game.dims
    n, H, S, K, N = dims.n_agents, dims.horizon, dims.n_states, config.K, config.N
    if designs is None:
        designs = [design_for_agent(game, i, config.design_tolerance) for i in range(n)]
    beta = np.array([
        config.bonus_scale * beta_generative(
            designs[i][0].max_leverage, N, H, K, n, config.delta, dims.actions[i], dims.feature_dims[i]
        )
        for i in range(n)
    ])

    policies = [np.zeros((H, K, S, a)) for a in dims.actions]
    v_hat = np.zeros((n, H + 1, S))
    q_avg = np.zeros((n, H, S))
    q_min = np.zeros((H, K, n, S))
    q_max = np.zeros((H, K, n, S))
    q_tables = [np.zeros((H, K, S, a)) for a in dims.actions] if record_q else None
    queries = 0
    for h in range(H - 1, -1, -1):
        states = [FtrlState(S, a, H) for a in dims.actions]
        acc = np.zeros((n, S))
        for k in range(K):
            step = tuple(st.policy() for st in states)
            for i in range(n):
                policies[i][h, k] = step[i]
            qs = []
            for i in range(n):
                rng = substream(config.seed, "gen-sample", h, k, i)
                data = sample_design_batch(game, i, h, step, *designs[i], N, rng)
                queries += len(data)
                r_hat, P_hat, _, _ = estimate_tables(data, game.features[i], S, config.lam)
                q = r_hat + tv_dual_batch(P_hat, v_hat[i, h + 1], float(game.sigma[i]))
                qs.append(q)
                if record_q:
                    q_tables[i][h, k] = q
                acc[i] += np.einsum("sa,sa->s", step[i], q)
                q_min[h, k, i] = q.min(axis=1)
                q_max[h, k, i] = q.max(axis=1)
            for i in range(n):
                states[i].update(qs[i])
        q_avg[:, h] = acc / K
        if q_avg[:, h].min() < -1e-9:
            raise NumericalValidationError(f"averaged q-value at step {h} is negative")
        v_hat[:, h] = np.minimum(np.maximum(q_avg[:, h], 0.0) + beta[:, None], H - h)
    mixture = PolicyMixture(tuple(policies))
    return GenerativeResult(mixture, v_hat, beta, q_min, q_max, q_avg, queries, designs, q_tables)


def generative_budget(game: GameInstance, config: GenerativeConfig) -> int:
    """Upper bound ``H K (N + d (d + 1) / 2)`` on queries per agent."""
    d = max(game.dims.feature_dims)
    return game.dims.horizon * config.K * (config.N + d * (d + 1) // 2)

