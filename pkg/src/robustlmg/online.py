"""Online robust Q-learning with FTRL and hybrid trajectory sampling.

Each round re-runs the per-step FTRL loop.  Data for step ``h`` come from
trajectories that follow past rounds' policies through an adversarial
environment (worst case against the past pessimistic values) for the first
``h`` steps and then take one nominal transition with a uniformly explored
own action.  Optimistic q-values drive FTRL; pessimistic ones steer the
adversarial environment of later rounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericalValidationError, ValidationError
from .estimation import Dataset, estimate_tables
from .ftrl import FtrlState
from .game import GameInstance, PolicyMixture, PolicyProfile, marginal_kernel, marginal_tables
from .rng import categorical, substream
from .robust import cce_gap, tv_dual_batch, tv_worst_case_kernel, tv_worst_case_table

BONUS_VARIANTS = ("proof", "printed")


def default_lambda(d: int, n: int, K: int, H: int, T: int, delta: float) -> float:
    return float(max(1, math.ceil(math.log(2 * d * n * K * H * T / delta))))


@dataclass(frozen=True)
class OnlineConfig:
    T: int
    N: Optional[int] = None
    K: Optional[int] = None
    lam: Optional[float] = None
    delta: float = 0.1
    s1: int = 0
    seed: int = 0
    bonus_scale: float = 1.0
    bonus_variant: str = "proof"

    def __post_init__(self):
        if self.N is None:
            object.__setattr__(self, "N", self.T)
        if self.K is None:
            object.__setattr__(self, "K", self.T)
        if min(self.T, self.N, self.K) < 1:
            raise ConfigError("T, N and K must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.lam is not None and self.lam < 1:
            raise ConfigError("lam must be >= 1")
        if self.bonus_scale < 0:
            raise ConfigError("bonus_scale must be nonnegative")
        if self.bonus_variant not in BONUS_VARIANTS:
            raise ConfigError(f"bonus_variant must be one of {BONUS_VARIANTS}")

    def ridge(self, game: GameInstance, i: int) -> float:
        if self.lam is not None:
            return float(self.lam)
        d = game.dims
        return default_lambda(d.feature_dims[i], d.n_agents, self.K, d.horizon, self.T, self.delta)


# -- environment oracle ---------------------------------------------------

def adversarial_step(game: GameInstance, i: int, j: int, s: int, a_i: int, others, V_next, rng, size=None):
    """Next state drawn from the worst case, against ``V_next``, of agent ``i``'s marginal kernel at step ``j``.

    With ``size`` given, returns that many independent draws.
    """
    P = marginal_kernel(game, i, j, s, a_i, others)
    Q = tv_worst_case_kernel(P, V_next, float(game.sigma[i]))
    draws = categorical(rng, np.broadcast_to(Q, (1 if size is None else int(size), len(Q))))
    return int(draws[0]) if size is None else draws


@dataclass
class RoundRecord:
    """What later rounds need from a finished round: its iterates and pessimistic values."""

    mixture: PolicyMixture  # (H, K, S, A_i)
    v_under: np.ndarray  # (n, H + 1, S)
    _worst: dict = field(default_factory=dict, repr=False)

    def worst_case(self, game: GameInstance, i: int, j: int) -> np.ndarray:
        """Adversarial kernels ``(K, S, A_i, S)`` for agent ``i`` at step ``j``."""
        key = (i, j)
        if key not in self._worst:
            P, _ = marginal_tables(game, i, j, self.mixture.step(j))
            self._worst[key] = tv_worst_case_table(P, self.v_under[i, j + 1], float(game.sigma[i]))
        return self._worst[key]


def bootstrap_record(game: GameInstance) -> RoundRecord:
    """Uniform single-slice policies with zero pessimistic values (nominal prefix)."""
    uni = PolicyProfile.uniform(game.dims)
    mix = PolicyMixture.from_profiles([uni])
    return RoundRecord(mix, np.zeros((game.dims.n_agents, game.dims.horizon + 1, game.dims.n_states)))


def _rollout(game: GameInstance, i: int, h: int, s1: int, rec: RoundRecord, m: int, rng) -> Dataset:
    dims = game.dims
    pols = rec.mixture.policies
    K = rec.mixture.n_slices
    s = np.full(m, s1, dtype=int)
    for j in range(h):
        k = rng.integers(K, size=m)
        a_i = categorical(rng, pols[i][j, k, s])
        s = categorical(rng, rec.worst_case(game, i, j)[k, s, a_i])
    k = rng.integers(K, size=m)
    a_own = rng.integers(dims.actions[i], size=m)
    joint = np.zeros(m, dtype=int)
    for j in range(dims.n_agents):
        a_j = a_own if j == i else categorical(rng, pols[j][h, k, s])
        joint = joint * dims.actions[j] + a_j
    s_next = categorical(rng, game.kernel[h, s, joint])
    return Dataset(i, s, a_own, game.reward[i, h, s, joint], s_next)


def hybrid_sampling(game: GameInstance, i: int, h: int, t: int, history, N: int, rng, s1: int = 0) -> Dataset:
    """Trajectory data for agent ``i`` at step ``h`` in round ``t`` (1-based).

    ``ceil(N / t)`` trajectories are drawn for each past round in ``history``.
    In the first round, ``history`` is empty and ``N`` trajectories follow the
    bootstrap record instead.
    """
    if t < 1:
        raise ValidationError("round index must be >= 1")
    if len(history) != t - 1:
        raise ValidationError(f"round {t} needs {t - 1} past rounds, got {len(history)}")
    if t == 1:
        return _rollout(game, i, h, s1, bootstrap_record(game), N, rng)
    m = math.ceil(N / t)
    parts = [_rollout(game, i, h, s1, rec, m, rng) for rec in history]
    return Dataset(
        i,
        np.concatenate([p.states for p in parts]),
        np.concatenate([p.actions for p in parts]),
        np.concatenate([p.rewards for p in parts]),
        np.concatenate([p.next_states for p in parts]),
    )


# -- estimates ------------------------------------------------------------

def online_q_pair(r_hat: np.ndarray, P_hat: np.ndarray, V_bar_next, V_under_next, sigma: float):
    """Optimistic and pessimistic robust q tables from one fitted model."""
    q_bar = r_hat + tv_dual_batch(P_hat, V_bar_next, sigma)
    q_under = r_hat + tv_dual_batch(P_hat, V_under_next, sigma)
    return q_bar, q_under


def bonus_radius(d: int, N: int, H: int, T: int, n: int, K: int, delta: float, lam: float, variant: str = "proof") -> float:
    """Multiplier of the elliptical width inside the online bonuses."""
    stat = 4 * H * math.sqrt(d * math.log(N * H + 1) + math.log(3 * T * N * H * n * K / delta))
    bias = 2 * H * math.sqrt(d * lam) if variant == "proof" else 2 * H * math.sqrt(d)
    return stat + bias


def beta_online(kind: str, widths: np.ndarray, policies: np.ndarray, radius: float, N: int, H: int, K: int, A_i: int):
    """Per-state bonus from iteration widths ``(K, S, A_i)`` and policies ``(K, S, A_i)``.

    ``kind="optimistic"`` takes the widest action and adds the FTRL term;
    ``kind="pessimistic"`` averages the width under the played policy.
    """
    if kind == "optimistic":
        return widths.mean(axis=0).max(axis=-1) * radius + 1.0 / N + 2 * H * math.sqrt(math.log(A_i) / K)
    if kind == "pessimistic":
        return np.einsum("ksa,ksa->s", policies, widths) / widths.shape[0] * radius + 1.0 / N
    raise ValidationError(f"unknown bonus kind {kind!r}")


@dataclass
class OnlineResult:
    rounds: list  # RoundRecord per round
    v_bar: np.ndarray  # (T, n, H + 1, S)
    v_under: np.ndarray  # (T, n, H + 1, S)
    samples: int

    @property
    def mixtures(self) -> list:
        return [r.mixture for r in self.rounds]

    @property
    def average_mixture(self) -> PolicyMixture:
        return PolicyMixture.concat(self.mixtures)


def run_online(game: GameInstance, config: OnlineConfig) -> OnlineResult:
    dims = game.dims
    n, H, S = dims.n_agents, dims.horizon, dims.n_states
    T, N, K = config.T, config.N, config.K
    if not 0 <= config.s1 < S:
        raise ConfigError(f"initial state {config.s1} out of range")
    lam = [config.ridge(game, i) for i in range(n)]
    radius = [
        bonus_radius(dims.feature_dims[i], N, H, T, n, K, config.delta, lam[i], config.bonus_variant)
        for i in range(n)
    ]
    history: list[RoundRecord] = []
    v_bar_all = np.zeros((T, n, H + 1, S))
    v_under_all = np.zeros((T, n, H + 1, S))
    samples = 0
    for t in range(1, T + 1):
        policies = [np.zeros((H, K, S, a)) for a in dims.actions]
        v_bar = np.zeros((n, H + 1, S))
        v_under = np.zeros((n, H + 1, S))
        for h in range(H - 1, -1, -1):
            states = [FtrlState(S, a, H) for a in dims.actions]
            acc_bar = np.zeros((n, S))
            acc_under = np.zeros((n, S))
            widths = [np.zeros((K, S, a)) for a in dims.actions]
            for k in range(K):
                step = [st.policy() for st in states]
                q_bars = []
                for i in range(n):
                    policies[i][h, k] = step[i]
                    rng = substream(config.seed, "online-sample", t, h, k, i)
                    data = hybrid_sampling(game, i, h, t, history, N, rng, config.s1)
                    samples += len(data)
                    r_hat, P_hat, widths[i][k], _ = estimate_tables(data, game.features[i], S, lam[i])
                    q_bar, q_under = online_q_pair(r_hat, P_hat, v_bar[i, h + 1], v_under[i, h + 1], float(game.sigma[i]))
                    acc_bar[i] += np.einsum("sa,sa->s", step[i], q_bar)
                    acc_under[i] += np.einsum("sa,sa->s", step[i], q_under)
                    q_bars.append(q_bar)
                for i in range(n):
                    states[i].update(q_bars[i])
            for i in range(n):
                pols = policies[i][h]
                # the scale multiplies the whole bonus, constants included
                b1 = config.bonus_scale * beta_online("optimistic", widths[i], pols, radius[i], N, H, K, dims.actions[i])
                b2 = config.bonus_scale * beta_online("pessimistic", widths[i], pols, radius[i], N, H, K, dims.actions[i])
                v_bar[i, h] = np.clip(acc_bar[i] / K + b1, 0.0, H - h)
                v_under[i, h] = np.clip(acc_under[i] / K - b2, 0.0, H - h)
            if np.any(v_under[:, h] > v_bar[:, h] + 1e-12):
                raise NumericalValidationError(f"pessimistic value exceeds optimistic value at round {t}, step {h}")
        history.append(RoundRecord(PolicyMixture(tuple(policies)), v_under))
        v_bar_all[t - 1] = v_bar
        v_under_all[t - 1] = v_under
    return OnlineResult(history, v_bar_all, v_under_all, samples)


# -- evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class RegretReport:
    v_star: np.ndarray  # (T, n) best-response values at s1
    v_pi: np.ndarray  # (T, n)
    per_round: np.ndarray  # (T, n) gaps
    cumulative: np.ndarray  # (T,) max over agents of the running sums

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])


def regret_eval(game: GameInstance, mixtures, s1: int = 0, semantics: str = "draw") -> RegretReport:
    """Cumulative regret of the per-round mixtures at ``s1``, scored by the exact oracles."""
    reps = [cce_gap(game, m, s1, semantics) for m in mixtures]
    v_star = np.array([r.best_response[:, s1] for r in reps])
    v_pi = np.array([r.policy_value[:, s1] for r in reps])
    per_round = v_star - v_pi
    cumulative = np.cumsum(per_round, axis=0).max(axis=1)
    return RegretReport(v_star, v_pi, per_round, cumulative)


@dataclass(frozen=True)
class CoverageReport:
    """One-sided bound checks for one run, scored at ``s1`` with per-step oracles."""

    v_star: np.ndarray  # (T, n)
    v_pi: np.ndarray  # (T, n)
    v_bar: np.ndarray  # (T, n)
    v_under: np.ndarray  # (T, n)
    tol: float = 1e-6

    @property
    def optimistic(self) -> bool:
        return bool(np.all(self.v_bar >= self.v_star - self.tol))

    @property
    def pessimistic(self) -> bool:
        return bool(np.all(self.v_under <= self.v_pi + self.tol))

    @property
    def sandwich(self) -> bool:
        """Gap bounded by the estimate spread (vacuous unless both one-sided checks hold)."""
        if not (self.optimistic and self.pessimistic):
            return True
        return bool(np.all(self.v_star - self.v_pi <= self.v_bar - self.v_under + 2 * self.tol))


def coverage_report(game: GameInstance, result: OnlineResult, s1: int = 0) -> CoverageReport:
    reg = regret_eval(game, result.mixtures, s1, semantics="per_step")
    return CoverageReport(reg.v_star, reg.v_pi, result.v_bar[:, :, 0, s1], result.v_under[:, :, 0, s1])
