"""Finite robust linear Markov games: ground truth, policies and generators.

Conventions used throughout the package:

* steps, states, agents and actions are 0-indexed integers;
* joint actions are flattened in C order (agent 0 is the most significant
  digit), see :func:`joint_index`;
* ``kernel[h, s, joint, s']`` is the nominal transition probability and
  ``reward[i, h, s, joint]`` agent ``i``'s reward in ``[0, 1]``;
* ``features[i][s, a_i]`` is agent ``i``'s feature vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .rng import substream

ROW_TOL = 1e-12
POLICY_TOL = 1e-12


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GameDims:
    n_agents: int
    horizon: int
    n_states: int
    actions: tuple[int, ...]
    feature_dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "feature_dims", tuple(int(d) for d in self.feature_dims))
        if min(self.n_agents, self.horizon, self.n_states) < 1:
            raise ValidationError("n_agents, horizon and n_states must be >= 1")
        if len(self.actions) != self.n_agents or len(self.feature_dims) != self.n_agents:
            raise ValidationError("actions and feature_dims need one entry per agent")
        if min(self.actions) < 1 or min(self.feature_dims) < 1:
            raise ValidationError("action counts and feature dims must be >= 1")

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.actions))

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "horizon": self.horizon,
            "n_states": self.n_states,
            "actions": list(self.actions),
            "feature_dims": list(self.feature_dims),
        }


def joint_index(actions: Sequence[int], dims: GameDims) -> int:
    return int(np.ravel_multi_index(tuple(int(a) for a in actions), dims.actions))


def joint_actions(joint: int, dims: GameDims) -> tuple[int, ...]:
    return tuple(int(a) for a in np.unravel_index(int(joint), dims.actions))


@dataclass(frozen=True, eq=False)
class GameInstance:
    """Ground-truth game.  Arrays are copied and made read-only on construction."""

    dims: GameDims
    kernel: np.ndarray
    reward: np.ndarray
    features: tuple[np.ndarray, ...]
    sigma: np.ndarray

    def __post_init__(self):
        d = self.dims
        kernel = _frozen(self.kernel)
        reward = _frozen(self.reward)
        features = tuple(_frozen(f) for f in self.features)
        sigma = _frozen(self.sigma)
        if kernel.shape != (d.horizon, d.n_states, d.n_joint, d.n_states):
            raise ValidationError(f"kernel shape {kernel.shape} does not match dims")
        if reward.shape != (d.n_agents, d.horizon, d.n_states, d.n_joint):
            raise ValidationError(f"reward shape {reward.shape} does not match dims")
        if len(features) != d.n_agents:
            raise ValidationError("need one feature table per agent")
        for i, f in enumerate(features):
            if f.shape != (d.n_states, d.actions[i], d.feature_dims[i]):
                raise ValidationError(f"features[{i}] shape {f.shape} does not match dims")
            if np.linalg.norm(f, axis=-1).max() > 1 + 1e-12:
                raise ValidationError(f"features[{i}] has a vector with norm > 1")
        if sigma.shape != (d.n_agents,):
            raise ValidationError("sigma needs one radius per agent")
        if kernel.min() < 0 or np.abs(kernel.sum(axis=-1) - 1).max() > ROW_TOL:
            raise ValidationError("kernel rows must be probability vectors")
        if reward.min() < 0 or reward.max() > 1:
            raise ValidationError("rewards must lie in [0, 1]")
        if sigma.min() < 0 or sigma.max() > 1:
            raise ValidationError("sigma must lie in [0, 1]")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "sigma", sigma)

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dims": self.dims.to_dict(),
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
            "features": [f.tolist() for f in self.features],
            "sigma": self.sigma.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "GameInstance":
        try:
            dims = GameDims(**doc["dims"])
            return cls(
                dims=dims,
                kernel=np.asarray(doc["kernel"], dtype=float),
                reward=np.asarray(doc["reward"], dtype=float),
                features=tuple(np.asarray(f, dtype=float) for f in doc["features"]),
                sigma=np.asarray(doc["sigma"], dtype=float),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed game document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GameInstance":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "GameInstance":
        return cls.from_json(Path(path).read_text())

    def with_sigma(self, sigma) -> "GameInstance":
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (self.dims.n_agents,))
        return GameInstance(self.dims, self.kernel, self.reward, self.features, sigma)


# -- policies ----------------------------------------------------------

def _check_rows(arr: np.ndarray, what: str) -> None:
    if arr.size and (arr.min() < 0 or np.abs(arr.sum(axis=-1) - 1).max() > POLICY_TOL):
        raise ValidationError(f"{what}: rows must be probability distributions")


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """Product policy; ``policies[i]`` has shape ``(H, S, A_i)``."""

    policies: tuple[np.ndarray, ...]

    def __post_init__(self):
        pols = tuple(_frozen(p) for p in self.policies)
        for i, p in enumerate(pols):
            if p.ndim != 3:
                raise ValidationError("profile policies must have shape (H, S, A_i)")
            _check_rows(p, f"policy of agent {i}")
        object.__setattr__(self, "policies", pols)

    @classmethod
    def uniform(cls, dims: GameDims) -> "PolicyProfile":
        return cls(tuple(np.full((dims.horizon, dims.n_states, a), 1.0 / a) for a in dims.actions))

    def step(self, h: int) -> tuple[np.ndarray, ...]:
        return tuple(p[h] for p in self.policies)


@dataclass(frozen=True, eq=False)
class PolicyMixture:
    """Per-step uniform mixture over K product-policy slices.

    ``policies[i]`` has shape ``(H, K, S, A_i)``; slice ``k`` at step ``h`` is
    the product of ``policies[i][h, k]`` over agents, weighted ``1/K``.
    """

    policies: tuple[np.ndarray, ...]

    def __post_init__(self):
        pols = tuple(_frozen(p) for p in self.policies)
        if not pols:
            raise ValidationError("mixture needs at least one agent")
        shape = pols[0].shape[:3]
        for i, p in enumerate(pols):
            if p.ndim != 4 or p.shape[:3] != shape:
                raise ValidationError("mixture policies must share shape (H, K, S, .)")
            _check_rows(p, f"mixture policy of agent {i}")
        if shape[1] < 1:
            raise ValidationError("mixture needs K >= 1")
        object.__setattr__(self, "policies", pols)

    @property
    def n_slices(self) -> int:
        return self.policies[0].shape[1]

    @property
    def horizon(self) -> int:
        return self.policies[0].shape[0]

    def step(self, h: int) -> tuple[np.ndarray, ...]:
        """Per-agent ``(K, S, A_i)`` arrays at step ``h``."""
        return tuple(p[h] for p in self.policies)

    def slice(self, k: int) -> "PolicyMixture":
        return PolicyMixture(tuple(p[:, k : k + 1] for p in self.policies))

    def with_agent(self, i: int, policy: np.ndarray) -> "PolicyMixture":
        """Replace agent ``i`` in every slice by ``policy`` of shape ``(H, S, A_i)``."""
        pols = list(self.policies)
        pols[i] = np.broadcast_to(policy[:, None], pols[i].shape)
        return PolicyMixture(tuple(pols))

    @classmethod
    def from_profiles(cls, profiles: Sequence[PolicyProfile]) -> "PolicyMixture":
        n = len(profiles[0].policies)
        return cls(tuple(np.stack([p.policies[i] for p in profiles], axis=1) for i in range(n)))

    @classmethod
    def concat(cls, mixtures: Sequence["PolicyMixture"]) -> "PolicyMixture":
        n = len(mixtures[0].policies)
        return cls(tuple(np.concatenate([m.policies[i] for m in mixtures], axis=1) for i in range(n)))

    def to_dict(self) -> dict:
        return {"policies": [p.tolist() for p in self.policies]}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PolicyMixture":
        return cls(tuple(np.asarray(p, dtype=float) for p in doc["policies"]))


# -- opponent marginalization ----------------------------------------

def _others_joint(game: GameInstance, i: int, step_policies: Sequence[np.ndarray]) -> np.ndarray:
    """Joint opponent distribution, shape ``(K, S, prod_{j != i} A_j)``."""
    S = game.dims.n_states
    first = np.asarray(step_policies[i])
    K = first.shape[0] if first.ndim == 3 else 1
    joint = np.ones((K, S, 1))
    for j in range(game.dims.n_agents):
        if j == i:
            continue
        pj = np.asarray(step_policies[j], dtype=float)
        if pj.ndim == 2:
            pj = pj[None]
        if pj.shape[1:] != (S, game.dims.actions[j]):
            raise ValidationError(f"policy of agent {j} has shape {pj.shape[1:]}")
        _check_rows(pj, f"policy of agent {j}")
        joint = (joint[..., :, None] * pj[:, :, None, :]).reshape(max(K, pj.shape[0]), S, -1)
    return joint


def _split_joint(game: GameInstance, arr: np.ndarray, i: int) -> np.ndarray:
    """Reshape a trailing-joint-action axis layout ``(S, J, ...)`` into ``(S, A_i, J_-i, ...)``."""
    d = game.dims
    rest = arr.shape[2:]
    t = arr.reshape((d.n_states,) + d.actions + rest)
    t = np.moveaxis(t, 1 + i, 1)
    return t.reshape((d.n_states, d.actions[i], -1) + rest)


def marginal_tables(game: GameInstance, i: int, h: int, step_policies: Sequence[np.ndarray]):
    """Opponent-marginalized kernel and reward tables for agent ``i`` at step ``h``.

    ``step_policies[j]`` is agent ``j``'s step-``h`` policy, either ``(S, A_j)``
    or a stack ``(K, S, A_j)``; agent ``i``'s entry is only used for its
    leading shape.  Returns ``kernel (K, S, A_i, S)`` and ``reward (K, S, A_i)``.
    """
    _check_index(game, i=i, h=h)
    others = _others_joint(game, i, step_policies)
    kern = _split_joint(game, game.kernel[h], i)
    rew = _split_joint(game, game.reward[i, h], i)
    P = np.einsum("ksj,sajt->ksat", others, kern)
    r = np.einsum("ksj,saj->ksa", others, rew)
    return P, r


def _check_index(game: GameInstance, i=None, h=None, s=None, a_i=None) -> None:
    d = game.dims
    if i is not None and not 0 <= i < d.n_agents:
        raise ValidationError(f"agent index {i} out of range")
    if h is not None and not 0 <= h < d.horizon:
        raise ValidationError(f"step {h} out of range")
    if s is not None and not 0 <= s < d.n_states:
        raise ValidationError(f"state {s} out of range")
    if a_i is not None and not 0 <= a_i < d.actions[i]:
        raise ValidationError(f"action {a_i} out of range for agent {i}")


def _others_as_steps(game: GameInstance, i: int, h: int, others) -> list[np.ndarray]:
    if isinstance(others, PolicyProfile):
        steps = list(others.step(h))
    else:
        steps = [None] * game.dims.n_agents
        for j, p in dict(others).items():
            steps[j] = np.asarray(p, dtype=float)
    steps[i] = np.zeros((game.dims.n_states, game.dims.actions[i]))
    for j, p in enumerate(steps):
        if p is None:
            raise ValidationError(f"missing policy for opponent {j}")
    return steps


def marginal_kernel(game: GameInstance, i: int, h: int, s: int, a_i: int, others) -> np.ndarray:
    """Nominal next-state distribution seen by agent ``i`` when opponents play ``others``.

    ``others`` is a :class:`PolicyProfile` or a mapping ``j -> (S, A_j)`` of
    step-``h`` policies for every ``j != i``.
    """
    _check_index(game, i=i, h=h, s=s, a_i=a_i)
    P, _ = marginal_tables(game, i, h, _others_as_steps(game, i, h, others))
    return P[0, s, a_i]


def marginal_reward(game: GameInstance, i: int, h: int, s: int, a_i: int, others) -> float:
    _check_index(game, i=i, h=h, s=s, a_i=a_i)
    _, r = marginal_tables(game, i, h, _others_as_steps(game, i, h, others))
    return float(r[0, s, a_i])


def sample_nominal(game: GameInstance, h: int, s: int, joint_action, rng: np.random.Generator):
    """One generative-model query: ``(reward vector over agents, next state)``."""
    _check_index(game, h=h, s=s)
    joint = joint_action if np.isscalar(joint_action) else joint_index(joint_action, game.dims)
    if not 0 <= int(joint) < game.dims.n_joint:
        raise ValidationError(f"joint action {joint_action} out of range")
    row = game.kernel[h, s, int(joint)]
    s_next = int(rng.choice(game.dims.n_states, p=row))
    return game.reward[:, h, s, int(joint)].copy(), s_next


# -- constructors --------------------------------------------------------

def tabular_features(n_states: int, n_actions: int) -> np.ndarray:
    return np.eye(n_states * n_actions).reshape(n_states, n_actions, n_states * n_actions)


def build_tabular(kernel, reward, sigma, actions: Sequence[int]) -> GameInstance:
    """Game with one-hot features over ``(s, a_i)``, so ``d_i = S * A_i``."""
    kernel = np.asarray(kernel, dtype=float)
    reward = np.asarray(reward, dtype=float)
    H, S = kernel.shape[:2]
    actions = tuple(int(a) for a in actions)
    dims = GameDims(len(actions), H, S, actions, tuple(S * a for a in actions))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (dims.n_agents,))
    feats = tuple(tabular_features(S, a) for a in actions)
    return GameInstance(dims, kernel, reward, feats, sigma)


def random_tabular(n_states: int, actions: Sequence[int], horizon: int, sigma, seed: int) -> GameInstance:
    """Random tabular game: Dirichlet(1) kernel rows and uniform rewards."""
    rng = substream(seed, "random_tabular")
    J = int(np.prod(actions))
    kernel = rng.dirichlet(np.ones(n_states), size=(horizon, n_states, J))
    reward = rng.random((len(actions), horizon, n_states, J))
    return build_tabular(kernel, reward, sigma, actions)


def recover_parameters(game: GameInstance, i: int, h: int, step_policies):
    """Least-squares ``(mu, theta, kernel_residual, reward_residual)`` for agent ``i``.

    ``mu`` has shape ``(d_i, S)``; residuals are Frobenius / Euclidean norms.
    """
    P, r = marginal_tables(game, i, h, step_policies)
    S, A = game.dims.n_states, game.dims.actions[i]
    Phi = game.features[i].reshape(S * A, -1)
    M = P[0].reshape(S * A, S)
    y = r[0].reshape(S * A)
    mu, *_ = np.linalg.lstsq(Phi, M, rcond=None)
    theta, *_ = np.linalg.lstsq(Phi, y, rcond=None)
    return mu, theta, float(np.linalg.norm(Phi @ mu - M)), float(np.linalg.norm(Phi @ theta - y))


def _random_step_policies(game: GameInstance, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.dirichlet(np.ones(a), size=game.dims.n_states) for a in game.dims.actions]


def validate_linear_structure(game: GameInstance, trial_policies: int, rng: np.random.Generator) -> float:
    """Largest least-squares residual of the per-agent linear model over random opponents."""
    worst = 0.0
    for i in range(game.dims.n_agents):
        for h in range(game.dims.horizon):
            for _ in range(trial_policies):
                steps = _random_step_policies(game, rng)
                *_, res_p, res_r = recover_parameters(game, i, h, steps)
                worst = max(worst, res_p, res_r)
    return worst


def build_random_linear(dims: GameDims, seed: int, sigma=0.1, max_attempts: int = 20) -> GameInstance:
    """Random game satisfying the per-agent linear assumption.

    Agent ``i`` gets features ``[e_s / sqrt 2 ; b_i(s, a_i)]`` with a random
    action block of size ``d_i - S``.  Kernels are ``p0(.|s)`` plus additive
    per-agent terms ``b_j(s, a_j)^T W_j`` whose rows sum to zero, so every
    opponent-marginalized kernel is linear in agent ``i``'s features.
    Rewards use the same additive structure and an affine map into [0, 1].
    """
    S, H, n = dims.n_states, dims.horizon, dims.n_agents
    blocks = [d - S for d in dims.feature_dims]
    for i, m in enumerate(blocks):
        if m < 1:
            raise ValidationError(f"feature_dims[{i}] must exceed n_states")
        if S * dims.actions[i] < dims.feature_dims[i]:
            raise ValidationError(f"agent {i}: S*A_i < d_i, features cannot span R^d")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))

    for attempt in range(max_attempts):
        rng = substream(seed, "random_linear", attempt)
        feats, bvecs = [], []
        for i in range(n):
            b = rng.normal(size=(S, dims.actions[i], blocks[i]))
            b /= np.linalg.norm(b, axis=-1, keepdims=True)
            b *= rng.uniform(0.3, 1.0, size=(S, dims.actions[i], 1)) / np.sqrt(2.0)
            onehot = np.broadcast_to(np.eye(S)[:, None, :] / np.sqrt(2.0), (S, dims.actions[i], S))
            feats.append(np.concatenate([onehot, b], axis=-1))
            bvecs.append(b)

        grids = np.indices(dims.actions).reshape(n, -1).T  # (J, n)
        kernel = np.empty((H, S, dims.n_joint, S))
        reward = np.empty((n, H, S, dims.n_joint))
        for h in range(H):
            p0 = 0.5 * rng.dirichlet(np.ones(S), size=S) + 0.5 / S
            delta = np.zeros((S, dims.n_joint, S))
            for j in range(n):
                W = rng.normal(size=(blocks[j], S))
                W -= W.mean(axis=1, keepdims=True)
                delta += np.einsum("sjm,mt->sjt", bvecs[j][:, grids[:, j]], W)
            scale = 0.9 * p0.min() / max(np.abs(delta).max(), 1e-300)
            kernel[h] = p0[:, None, :] + scale * delta
            for i in range(n):
                raw = rng.random(S)[:, None] * np.ones((1, dims.n_joint))
                for j in range(n):
                    w = rng.normal(size=blocks[j])
                    raw += bvecs[j][:, grids[:, j]] @ w
                lo, hi = raw.min(), raw.max()
                reward[i, h] = (raw - lo) / (hi - lo) if hi > lo else np.full_like(raw, 0.5)
        try:
            game = GameInstance(dims, kernel, reward, tuple(feats), sigma)
        except ValidationError:
            continue
        if _normalization_ok(game, rng):
            return game
    raise ValidationError(f"could not build a normalized linear game in {max_attempts} attempts")


def _normalization_ok(game: GameInstance, rng: np.random.Generator) -> bool:
    """Check full rank and the bounds ||theta|| <= d and ||mu(s')|| <= sqrt(d)."""
    for i in range(game.dims.n_agents):
        d = game.dims.feature_dims[i]
        Phi = game.features[i].reshape(-1, d)
        if np.linalg.matrix_rank(Phi) < d:
            return False
        for h in range(game.dims.horizon):
            mu, theta, res_p, res_r = recover_parameters(game, i, h, _random_step_policies(game, rng))
            if max(res_p, res_r) > 1e-9:
                return False
            if np.linalg.norm(theta) > d or np.linalg.norm(mu, axis=0).max() > np.sqrt(d):
                return False
    return True
