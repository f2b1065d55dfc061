import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robustlmg.errors import ValidationError
from robustlmg.estimation import Dataset, GramMatrix, bonus_width, estimate_tables, fit
from robustlmg.rng import substream


def test_scalar_closed_form():
    feats = np.ones((1, 1, 1))
    gram, rew, trans = fit(Dataset(0, [0], [0], [0.5], [0]), feats, 1.0)
    assert gram.matrix[0, 0] == 2.0
    assert abs(rew.theta[0] - 0.25) < 1e-15
    assert abs(trans.measure(np.ones(1)).weights[0] - 0.5) < 1e-15


def test_empty_dataset_is_prior_only():
    feats = np.eye(4).reshape(2, 2, 4)
    gram, rew, trans = fit(Dataset.empty(0), feats, 2.0)
    np.testing.assert_array_equal(gram.matrix, 2 * np.eye(4))
    np.testing.assert_array_equal(rew.theta, np.zeros(4))
    assert trans.measure(feats[0, 0]).support.size == 0
    assert np.all(trans.dense(feats, 2) == 0)


def test_ridge_below_one_rejected():
    with pytest.raises(ValidationError):
        fit(Dataset.empty(0), np.eye(2).reshape(1, 2, 2), 0.5)


def test_mismatched_columns_rejected():
    with pytest.raises(ValidationError):
        Dataset(0, [0, 1], [0], [0.1], [0])


def test_one_hot_counts():
    feats = np.eye(6).reshape(3, 2, 6)
    data = Dataset(0, [1, 1, 1, 1], [0, 0, 0, 0], [1, 1, 0, 1], [2, 2, 2, 0])
    r_hat, P_hat, widths, _ = estimate_tables(data, feats, 3, 1.0)
    assert abs(P_hat[1, 0, 2] - 0.6) < 1e-12
    assert abs(P_hat[1, 0].sum() - 0.8) < 1e-12
    assert abs(r_hat[1, 0] - 0.6) < 1e-12
    assert abs(widths[1, 0] - 1 / np.sqrt(5)) < 1e-12
    assert abs(widths[0, 0] - 1.0) < 1e-12


def _random_data(seed, m, d, S=4, A=3):
    rng = substream(seed, "est")
    feats = rng.normal(size=(S, A, d))
    feats /= np.maximum(np.linalg.norm(feats, axis=-1, keepdims=True), 1.0)
    data = Dataset(0, rng.integers(S, size=m), rng.integers(A, size=m), rng.random(m), rng.integers(S, size=m))
    return feats, data


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 40), st.integers(1, 5), st.floats(1, 10))
def test_fit_properties(seed, m, d, lam):
    feats, data = _random_data(seed, m, d)
    gram, rew, trans = fit(data, feats, lam)
    Lam = gram.matrix
    assert np.abs(Lam - Lam.T).max() <= 1e-12
    assert np.linalg.eigvalsh(Lam).min() >= lam - 1e-9
    Phi = feats[data.states, data.actions]
    assert np.linalg.norm(Lam @ rew.theta - Phi.T @ data.rewards) <= 1e-9
    phi = feats[0, 0]
    # merging duplicate next states keeps the total weight
    per_sample = phi @ np.linalg.solve(Lam, Phi.T) if m else np.zeros(0)
    assert abs(trans.measure(phi).total - per_sample.sum()) <= 1e-10
    assert len(np.unique(trans.support)) == len(trans.support)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_bonus_width_matches_dense_inverse(seed, d):
    rng = substream(seed, "width")
    B = rng.normal(size=(d, d))
    Lam = B @ B.T + np.eye(d)
    phi = rng.normal(size=d)
    ref = np.sqrt(phi @ np.linalg.inv(Lam) @ phi)
    assert abs(bonus_width(phi, GramMatrix(Lam, 1.0)) - ref) <= 1e-10
    assert bonus_width(np.zeros(d), GramMatrix(Lam, 1.0)) == 0.0
    lam = 3.0
    u = phi / np.linalg.norm(phi)
    assert abs(bonus_width(u, GramMatrix(lam * np.eye(d), lam)) - 1 / np.sqrt(lam)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 20))
def test_more_data_never_widens(seed, m):
    feats, data = _random_data(seed, m + 1, 3)
    fewer = Dataset(0, data.states[:-1], data.actions[:-1], data.rewards[:-1], data.next_states[:-1])
    g_more = fit(data, feats, 1.0)[0]
    g_less = fit(fewer, feats, 1.0)[0]
    w_more = g_more.width(feats)
    assert np.all(w_more <= g_less.width(feats) + 1e-12)
    assert np.all(w_more <= np.linalg.norm(feats, axis=-1) + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_one_hot_weights_nonnegative(seed, m):
    rng = substream(seed, "onehot")
    feats = np.eye(6).reshape(3, 2, 6)
    data = Dataset(0, rng.integers(3, size=m), rng.integers(2, size=m), rng.random(m), rng.integers(3, size=m))
    _, P_hat, _, _ = estimate_tables(data, feats, 3, 1.0)
    counts = np.zeros((3, 2))
    np.add.at(counts, (data.states, data.actions), 1)
    assert P_hat.min() >= -1e-15
    np.testing.assert_allclose(P_hat.sum(-1), counts / (counts + 1), atol=1e-12)
