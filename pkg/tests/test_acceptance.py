"""Acceptance checks, one test per criterion.

Run ``pytest tests/test_acceptance.py`` (or execute this file directly); the
terminal summary prints one PASS/FAIL line per criterion.  The learner runs
for criteria 6-9 go through the experiment harness so that criterion 10 can
replay them and compare the CSV bodies.
"""
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import chisquare

from robustlmg.design import leverages, optimal_design
from robustlmg.estimation import Dataset, fit
from robustlmg.ftrl import FtrlState
from robustlmg.game import PolicyMixture, random_tabular
from robustlmg.generative import GenerativeConfig, run_generative, sample_design_batch
from robustlmg.harness.config import build_config
from robustlmg.harness.experiment import THREADS_ENV, run_experiment
from robustlmg.harness.io import csv_body, read_csv
from robustlmg.online import adversarial_step
from robustlmg.rng import substream
from robustlmg.robust import robust_best_response, robust_policy_eval, tv_dual_inf, tv_worst_case_kernel

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

pytestmark = pytest.mark.acceptance

GAME = {"generator": "tabular", "n_states": 3, "actions": [2, 2], "horizon": 2, "sigma": [0.1, 0.2], "seed": 7}
H = 2

RUNS = {
    "c6": ("gen", {"N": 2000, "K": 200, "delta": 0.1, "bonus_scale": 1.0}, list(range(50)), {}),
    "c7": ("gen", {"delta": 0.1, "bonus_scale": 1.0}, list(range(5)),
           {"N": [250, 1000, 4000], "K": [25, 100, 400]}),
    "c8": ("online", {"T": 8, "N": 8, "K": 8, "delta": 0.1, "s1": 0}, list(range(30)), {}),
    "c9": ("online", {"delta": 0.1, "s1": 0}, list(range(5)), {"T": [4, 8, 16]}),
}


def _run(key, out: Path, threads: int):
    mode, params, seeds, sweep = RUNS[key]
    doc = {"game": GAME, "params": params, "seeds": seeds, "sweep": sweep, "sweep_mode": "zip"}
    cfg = build_config(mode, doc, out=str(out))
    old = os.environ.get(THREADS_ENV)
    os.environ[THREADS_ENV] = str(threads)
    try:
        t0 = time.perf_counter()
        rows = run_experiment(cfg)
        return rows, time.perf_counter() - t0
    finally:
        if old is None:
            os.environ.pop(THREADS_ENV, None)
        else:
            os.environ[THREADS_ENV] = old


@pytest.fixture(scope="session")
def harness_runs(tmp_path_factory):
    cache = {}

    def get(key):
        if key not in cache:
            out = tmp_path_factory.mktemp(f"{key}_t1")
            rows, secs = _run(key, out, threads=1)
            cache[key] = (rows, secs, out)
        return cache[key]

    return get


def _by_cell(rows, metric):
    cells = {}
    for r in rows:
        cells.setdefault(r["cell"], []).append(r[metric])
    return [np.array(cells[c], dtype=float) for c in sorted(cells)]


# 1 -----------------------------------------------------------------------------

@pytest.mark.criterion(1)
def test_c1_dual_matches_lp_and_worst_case_kernel_attains_it():
    rng = substream(1, "acceptance-dual")
    t0 = time.perf_counter()
    for _ in range(1000):
        S = int(rng.integers(1, 9))
        P = rng.dirichlet(np.ones(S))
        if rng.random() < 0.3:
            P[rng.random(S) < 0.4] = 0.0
            P = P / P.sum() if P.sum() > 0 else np.eye(S)[0]
        V = rng.random(S) * H
        if rng.random() < 0.2:
            V = np.round(V)
        sigma = float(rng.random())
        lp = oracles.lp_tv_inf(P, V, sigma)
        assert abs(tv_dual_inf(P, V, sigma) - lp) <= 1e-8
        Q = tv_worst_case_kernel(P, V, sigma)
        assert abs(Q @ V - lp) <= 1e-9
        assert Q.min() >= 0 and abs(Q.sum() - 1) <= 1e-12
        assert 0.5 * np.abs(Q - P).sum() <= sigma + 1e-12
    assert time.perf_counter() - t0 < 10


# 2 -----------------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_c2_zero_radius_reduces_to_nominal():
    game = random_tabular(3, (2, 2), 2, 0.0, seed=11)
    rng = substream(2, "acceptance-sigma0")
    K = 3
    pols = [rng.dirichlet(np.ones(a), size=(H, K, 3)) for a in game.dims.actions]
    mix = PolicyMixture(tuple(pols))
    for i in range(2):
        ref = oracles.robust_eval_enum(game, pols, i, oracles.nominal_inner)
        np.testing.assert_allclose(robust_policy_eval(game, mix, i), ref, atol=1e-9, rtol=0)
        br = oracles.best_response_brute(game, pols, i, oracles.nominal_inner)
        np.testing.assert_allclose(robust_best_response(game, mix, i)[0][0], br, atol=1e-9, rtol=0)

    # q-backups of the generative learner: rebuild each dataset and back up non-robustly
    cfg = GenerativeConfig(N=60, K=4, seed=5)
    res = run_generative(game, cfg, record_q=True)
    for h in range(H):
        for k in range(cfg.K):
            step = tuple(p[h, k] for p in res.mixture.policies)
            for i in range(2):
                data = sample_design_batch(game, i, h, step, *res.designs[i], cfg.N,
                                           substream(cfg.seed, "gen-sample", h, k, i))
                Phi = game.features[i][data.states, data.actions]
                Lam_inv = np.linalg.inv(Phi.T @ Phi + np.eye(Phi.shape[1]))
                feats = game.features[i].reshape(-1, Phi.shape[1])
                r_hat = feats @ Lam_inv @ Phi.T @ data.rewards
                W = feats @ Lam_inv @ Phi.T  # weight of each sample at every (s, a)
                nxt = res.v_hat[i, h + 1][data.next_states]
                q_ref = (r_hat + W @ nxt).reshape(3, 2)
                np.testing.assert_allclose(res.q_tables[i][h, k], q_ref, atol=1e-9, rtol=0)

    # adversarial step with sigma = 0 samples the nominal marginal kernel
    others = {1: rng.dirichlet(np.ones(2), size=3)}
    V_next = rng.random(3) * H
    draws = adversarial_step(game, 0, 0, 1, 1, others, V_next, substream(2, "chi2"), size=100_000)
    P, _ = oracles.marginal_by_enumeration(game.kernel[0], game.reward[0, 0], (2, 2), 0,
                                           {1: others[1]}, 1, 1)
    counts = np.bincount(draws, minlength=3)
    keep = P > 0
    assert counts[~keep].sum() == 0
    assert chisquare(counts[keep], P[keep] * len(draws)).pvalue > 0.01


# 3 -----------------------------------------------------------------------------

@pytest.mark.criterion(3)
def test_c3_design_support_and_leverage():
    rng = substream(3, "acceptance-design")
    t0 = time.perf_counter()
    for trial in range(20):
        d = int(rng.integers(2, 7))
        m = int(rng.integers(d + 1, 80))
        X = rng.normal(size=(m, d))
        X /= np.maximum(np.linalg.norm(X, axis=1, keepdims=True), 1.0) * rng.uniform(1.0, 3.0, size=(m, 1))
        res = optimal_design(X)
        assert len(res.support) <= d * (d + 1) // 2
        M = X[res.support].T @ (res.rho[:, None] * X[res.support])
        assert leverages(X, M).max() <= 1.1 * d
    for d in range(1, 7):
        assert optimal_design(np.eye(d)).max_leverage == d
    assert time.perf_counter() - t0 < 30


# 4 -----------------------------------------------------------------------------

@pytest.mark.criterion(4)
def test_c4_one_hot_ridge_matches_counts():
    S, A = 3, 2
    feats = np.eye(S * A).reshape(S, A, S * A)
    # (s, a) = (0, 1): four visits, three to state 2, one to state 0
    # (s, a) = (2, 0): two visits, both to state 1
    data = Dataset(0, [0, 0, 0, 0, 2, 2], [1, 1, 1, 1, 0, 0], [1.0, 0.5, 0.0, 0.5, 0.2, 0.4],
                   [2, 2, 2, 0, 1, 1])
    for lam in (1.0, 2.0, 5.0):
        gram, rew, trans = fit(data, feats, lam)
        P = trans.dense(feats, S)
        assert abs(P[0, 1, 2] - 3 / (4 + lam)) <= 1e-10
        assert abs(P[0, 1, 0] - 1 / (4 + lam)) <= 1e-10
        assert abs(P[2, 0, 1] - 2 / (2 + lam)) <= 1e-10
        assert abs(P[0, 1].sum() - 4 / (4 + lam)) <= 1e-10
        assert np.abs(P[1]).max() <= 1e-10
        r = rew(feats)
        assert abs(r[0, 1] - 2.0 / (4 + lam)) <= 1e-10
        assert abs(r[2, 0] - 0.6 / (2 + lam)) <= 1e-10
    gram, _, trans = fit(data, feats, 1.0)
    assert abs(trans.dense(feats, S)[0, 1, 2] - 0.6) <= 1e-10


# 5 -----------------------------------------------------------------------------

def _ftrl_regret(K, A, seed, kind):
    rng = substream(seed, "acceptance-ftrl", K, A)
    state = FtrlState(1, A, H)
    total = np.zeros(A)
    earned = 0.0
    for k in range(K):
        p = state.policy()[0]
        if kind == "adaptive":
            g = np.zeros(A)
            g[np.argmin(p + 1e-12 * rng.random(A))] = H
        elif kind == "two_phase":
            g = np.zeros(A)
            g[0 if k < K // 2 else 1] = H
            g += rng.random(A) * 0.1 * H
            g = np.minimum(g, H)
        else:
            g = rng.random(A) * H
        earned += p @ g
        total += g
        state.update(g[None])
    return total.max() - earned


@pytest.mark.criterion(5)
def test_c5_ftrl_regret_within_bound():
    for K in (64, 256):
        for A in (2, 4):
            for kind in ("adaptive", "two_phase", "stochastic"):
                regrets = [_ftrl_regret(K, A, seed, kind) for seed in range(20)]
                assert np.median(regrets) <= 2 * H * math.sqrt(K * math.log(A)) * 1.1, (K, A, kind)


# 6 -----------------------------------------------------------------------------

@pytest.mark.criterion(6)
def test_c6_generative_optimism(harness_runs):
    rows, secs, _ = harness_runs("c6")
    assert len(rows) == 50
    frac = np.mean([r["optimistic"] for r in rows])
    assert frac >= 0.8
    assert secs <= 300


# 7 -----------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_c7_generative_gap_trend(harness_runs):
    rows, secs, _ = harness_runs("c7")
    med = [float(np.median(g)) for g in _by_cell(rows, "gap")]
    assert len(med) == 3
    for a, b in zip(med, med[1:]):
        assert b <= a + 0.02 * H
    assert med[-1] <= 0.25 * H
    assert secs <= 600


# 8 -----------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_c8_online_sandwich_and_coverage(harness_runs):
    rows, secs, out = harness_runs("c8")
    assert len(rows) == 30
    assert np.mean([r["optimistic"] for r in rows]) >= 0.8
    assert np.mean([r["pessimistic"] for r in rows]) >= 0.8
    assert all(r["sandwich"] for r in rows)
    for seed in range(30):
        header, body = read_csv(out / f"rounds_c0_s{seed}.csv")
        vb, vu = header.index("v_bar"), header.index("v_under")
        assert all(float(b[vu]) <= float(b[vb]) for b in body)
    assert secs <= 600


# 9 -----------------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_c9_online_regret_trend(harness_runs):
    rows, _, _ = harness_runs("c9")
    med = [float(np.median(g)) for g in _by_cell(rows, "regret_per_round")]
    assert len(med) == 3
    for a, b in zip(med, med[1:]):
        assert b <= 1.2 * a
    assert min(r["min_increment"] for r in rows) >= -1e-9
    assert all(r["xi_hat_gap"] <= r["regret_per_round"] + 1e-9 for r in rows)


# 10 ----------------------------------------------------------------------------

@pytest.mark.criterion(10)
def test_c10_replays_are_byte_identical(harness_runs, tmp_path):
    for key in RUNS:
        _, _, first = harness_runs(key)
        again = tmp_path / key
        _run(key, again, threads=3)
        names = sorted(p.name for p in first.glob("*.csv"))
        assert names == sorted(p.name for p in again.glob("*.csv"))
        for name in names:
            assert csv_body(first / name) == csv_body(again / name), name
    # the pure-function modes through the same path
    for mode, params in (("dual-check", {"instances": 200}), ("design", {})):
        bodies = []
        for threads in (1, 2):
            out = tmp_path / f"{mode}_{threads}"
            cfg = build_config(mode, {"game": GAME, "params": params, "seeds": [0, 1]}, out=str(out))
            os.environ[THREADS_ENV] = str(threads)
            try:
                run_experiment(cfg)
            finally:
                os.environ.pop(THREADS_ENV, None)
            bodies.append(csv_body(out / "results.csv"))
        assert bodies[0] == bodies[1]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
