"""Seeded experiment runs: one job per (sweep cell, seed), results in CSV."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..design import design_for_agent
from ..errors import ConfigError
from ..game import GameDims, GameInstance, PolicyMixture, build_random_linear, random_tabular
from ..generative import GenerativeConfig, run_generative
from ..online import OnlineConfig, coverage_report, regret_eval, run_online
from ..rng import substream
from ..robust import cce_gap, robust_best_response
from .config import ExperimentConfig
from .dualcheck import check_instance, random_instance
from .io import git_blob_sha1, write_csv

THREADS_ENV = "ROBUSTLMG_THREADS"


@dataclass
class JobResult:
    metrics: dict
    files: dict = field(default_factory=dict)  # name -> (header, rows) or JSON-able dict


# -- game source ------------------------------------------------------------

def load_game(spec: dict) -> tuple[GameInstance, str]:
    """Build or load the game; returns it with the git-style hash of its JSON."""
    if "path" in spec:
        path = Path(spec["path"])
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read game file {path}: {exc}") from None
        game = GameInstance.from_json(data.decode())
        return game, git_blob_sha1(data)
    kind = spec.get("generator")
    try:
        actions = tuple(int(a) for a in spec["actions"])
        if kind == "tabular":
            game = random_tabular(int(spec["n_states"]), actions, int(spec["horizon"]), spec["sigma"], int(spec["seed"]))
        elif kind == "linear":
            dims = GameDims(len(actions), int(spec["horizon"]), int(spec["n_states"]), actions,
                            tuple(int(d) for d in spec["feature_dims"]))
            game = build_random_linear(dims, int(spec["seed"]), spec["sigma"])
        else:
            raise ConfigError(f"unknown game generator {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"game generator spec is missing {exc}") from None
    return game, git_blob_sha1(game.to_json().encode())


def _cell_game(game: GameInstance, cell: dict) -> GameInstance:
    if cell.get("sigma") is not None:
        return game.with_sigma(cell["sigma"])
    return game


# -- per-mode jobs ------------------------------------------------------------

def _pick(cell: dict, cls_fields) -> dict:
    return {k: cell[k] for k in cls_fields if k in cell and cell[k] is not None}


def _job_gen(game, cell, seed) -> JobResult:
    cfg = GenerativeConfig(seed=seed, **_pick(cell, ("N", "K", "delta", "lam", "bonus_scale", "design_tolerance")))
    res = run_generative(game, cfg)
    rep = cce_gap(game, res.mixture)
    optimistic = all(
        np.all(res.v_hat[i, 0] >= robust_best_response(game, res.mixture, i)[0][0] - 1e-6)
        for i in range(game.dims.n_agents)
    )
    metrics = {
        "gap": rep.max_gap,
        "gap_draw": cce_gap(game, res.mixture, semantics="draw").max_gap,
        "queries": res.total_queries,
        "beta_max": float(res.beta.max()),
        "optimistic": int(optimistic),
    }
    diag = (("h", "k", "i", "s", "v_hat", "beta", "q_min", "q_max"), list(res.diagnostics_rows()))
    return JobResult(metrics, {"diagnostics": diag, "mixture": res.mixture.to_dict()})


def _job_online(game, cell, seed) -> JobResult:
    cfg = OnlineConfig(seed=seed, **_pick(cell, ("T", "N", "K", "lam", "delta", "s1", "bonus_scale", "bonus_variant")))
    res = run_online(game, cfg)
    reg = regret_eval(game, res.mixtures, cfg.s1)
    cov = coverage_report(game, res, cfg.s1)
    xi_gap = cce_gap(game, res.average_mixture, cfg.s1, semantics="draw").max_gap
    rows = []
    for t in range(cfg.T):
        for i in range(game.dims.n_agents):
            rows.append((t + 1, i, float(reg.v_star[t, i]), float(reg.v_pi[t, i]),
                         float(res.v_bar[t, i, 0, cfg.s1]), float(res.v_under[t, i, 0, cfg.s1]),
                         float(reg.cumulative[t]), float(cov.v_star[t, i]), float(cov.v_pi[t, i])))
    header = ("t", "i", "v_star", "v_pi", "v_bar", "v_under", "regret_cum", "v_star_step", "v_pi_step")
    metrics = {
        "regret": reg.total,
        "regret_per_round": reg.total / cfg.T,
        "xi_hat_gap": xi_gap,
        "optimistic": int(cov.optimistic),
        "pessimistic": int(cov.pessimistic),
        "sandwich": int(cov.sandwich),
        "min_increment": float(np.diff(np.concatenate([[0.0], reg.cumulative])).min()),
    }
    return JobResult(metrics, {"rounds": (header, rows), "mixture": res.average_mixture.to_dict()})


def _job_eval(game, cell, seed, mixture_path) -> JobResult:
    try:
        doc = json.loads(Path(mixture_path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read mixture {mixture_path}: {exc}") from None
    mix = PolicyMixture.from_dict(doc)
    rep = cce_gap(game, mix, cell.get("s1"), cell.get("semantics", "per_step"))
    metrics = {"gap": rep.max_gap}
    metrics.update({f"gap_{i}": float(g) for i, g in enumerate(rep.per_agent)})
    return JobResult(metrics)


def _job_dual(cell, seed) -> JobResult:
    rng = substream(seed, "dual-check")
    stats = [check_instance(*random_instance(rng, int(cell["max_states"]), float(cell["horizon"])))
             for _ in range(int(cell["instances"]))]
    return JobResult({
        "instances": len(stats),
        "max_dual_err": max(s["dual_err"] for s in stats),
        "max_kernel_err": max(s["kernel_err"] for s in stats),
        "all_in_ball": int(all(s["in_ball"] for s in stats)),
    })


def _job_design(game, cell, seed) -> JobResult:
    files, metrics = {}, {}
    for i in range(game.dims.n_agents):
        res, pairs = design_for_agent(game, i, float(cell.get("design_tolerance", 0.05)))
        metrics[f"leverage_{i}"] = res.max_leverage
        metrics[f"support_{i}"] = len(res.support)
        rows = [(int(pairs[j][0]), int(pairs[j][1]), float(r)) for j, r in zip(res.support, res.rho)]
        files[f"design_agent{i}"] = (("s", "a", "rho"), rows)
    return JobResult(metrics, files)


# -- orchestration --------------------------------------------------------------

def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _run_job(config: ExperimentConfig, game, cell, seed) -> JobResult:
    if config.mode == "gen":
        return _job_gen(_cell_game(game, cell), cell, seed)
    if config.mode == "online":
        return _job_online(_cell_game(game, cell), cell, seed)
    if config.mode == "eval":
        return _job_eval(_cell_game(game, cell), cell, seed, config.mixture)
    if config.mode == "dual-check":
        return _job_dual(cell, seed)
    if config.mode == "design":
        return _job_design(game, cell, seed)
    raise ConfigError(f"mode {config.mode!r} has no per-seed jobs")


def emit_summary(rows: list[dict], keys, metrics) -> tuple[tuple, list]:
    """Median and quartiles of every metric within each group of ``keys``."""
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for gkey, members in groups.items():
        for m in metrics:
            vals = np.array([float(r[m]) for r in members])
            q25, med, q75 = np.percentile(vals, [25, 50, 75])
            out.append(gkey + (m, len(vals), float(med), float(q25), float(q75)))
    return tuple(keys) + ("metric", "count", "median", "q25", "q75"), out


def _prepare_out(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {path} is not writable: {exc}") from None


def run_experiment(config: ExperimentConfig) -> list[dict]:
    """Run every (cell, seed) job and write results, summary and manifest to ``config.out``."""
    out = Path(config.out)
    _prepare_out(out)
    needs_game = config.mode != "dual-check"
    game, game_hash = load_game(config.game) if needs_game else (None, None)
    files_written = []

    if config.mode == "make-game":
        g = _cell_game(game, config.params)
        (out / "game.json").write_text(g.to_json())
        files_written.append("game.json")
        rows = [{"game_sha1": git_blob_sha1(g.to_json().encode()), "n_states": g.dims.n_states,
                 "horizon": g.dims.horizon, "n_agents": g.dims.n_agents}]
        write_csv(out / "results.csv", list(rows[0]), [list(rows[0].values())])
        _write_manifest(out, config, game_hash, files_written + ["results.csv"])
        return rows

    cells = config.cells()
    jobs = [(c, cell, seed) for c, cell in enumerate(cells) for seed in config.seeds]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda job: _run_job(config, game, job[1], job[2]), jobs))

    sweep_keys = list(config.sweep)
    rows = []
    for (c, cell, seed), res in zip(jobs, results):
        row = {"cell": c, "seed": seed}
        row.update({k: cell[k] for k in sweep_keys})
        row.update(res.metrics)
        rows.append(row)
        for name, payload in res.files.items():
            fname = f"{name}_c{c}_s{seed}"
            if isinstance(payload, tuple):
                write_csv(out / f"{fname}.csv", *payload)
                files_written.append(f"{fname}.csv")
            else:
                (out / f"{fname}.json").write_text(json.dumps(payload))
                files_written.append(f"{fname}.json")

    header = list(rows[0])
    write_csv(out / "results.csv", header, [[r[h] for h in header] for r in rows])
    metric_keys = [k for k in header if k not in ("cell", "seed", *sweep_keys)]
    s_header, s_rows = emit_summary(rows, ["cell"] + sweep_keys, metric_keys)
    write_csv(out / "summary.csv", s_header, s_rows)
    _write_manifest(out, config, game_hash, files_written + ["results.csv", "summary.csv"])
    return rows


def _write_manifest(out: Path, config: ExperimentConfig, game_hash, files) -> None:
    doc = {
        "version": __version__,
        "config": config.to_dict(),
        "game_sha1": game_hash,
        "threads_env": THREADS_ENV,
        "files": sorted(files),
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))

