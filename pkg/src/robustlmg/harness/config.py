"""Experiment configuration: YAML file, then command-line overrides.

Precedence, lowest to highest: built-in defaults, the ``--config`` file,
explicit flags (``--seed``, ``--out``, ``--sweep``, ``--set``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import ConfigError

MODES = ("gen", "online", "eval", "dual-check", "design", "make-game")

DEFAULT_PARAMS = {
    "gen": {"N": 1000, "K": 100, "delta": 0.1, "lam": 1.0, "bonus_scale": 1.0, "design_tolerance": 0.05},
    "online": {"T": 8, "N": None, "K": None, "lam": None, "delta": 0.1, "s1": 0,
               "bonus_scale": 1.0, "bonus_variant": "proof"},
    "eval": {"s1": None, "semantics": "per_step"},
    "dual-check": {"instances": 1000, "max_states": 8, "horizon": 2},
    "design": {"design_tolerance": 0.05},
    "make-game": {},
}

DEFAULT_GAME = {"generator": "tabular", "n_states": 3, "actions": [2, 2], "horizon": 2,
                "sigma": [0.1, 0.2], "seed": 7}


@dataclass
class ExperimentConfig:
    mode: str
    game: dict = field(default_factory=lambda: dict(DEFAULT_GAME))
    params: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    sweep: dict = field(default_factory=dict)
    sweep_mode: str = "product"
    out: str = "out"
    mixture: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        try:
            self.seeds = [int(s) for s in self.seeds]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"seeds must be integers: {exc}") from None
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ConfigError("seeds must be unsigned 64-bit integers")
        if self.sweep_mode not in ("product", "zip"):
            raise ConfigError("sweep_mode must be 'product' or 'zip'")
        merged = dict(DEFAULT_PARAMS[self.mode])
        merged.update(self.params or {})
        self.params = merged
        for key, values in self.sweep.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep values for {key!r} must be a nonempty list")
        if self.sweep_mode == "zip" and len({len(v) for v in self.sweep.values()}) > 1:
            raise ConfigError("zipped sweeps need equal-length value lists")
        if self.mode == "eval" and not self.mixture:
            raise ConfigError("eval mode needs a 'mixture' path")
        if not isinstance(self.game, dict) or not ("path" in self.game or "generator" in self.game):
            raise ConfigError("game must give either 'path' or 'generator'")

    def cells(self) -> list[dict]:
        """Parameter dictionaries, one per sweep cell, in a fixed order."""
        if not self.sweep:
            return [dict(self.params)]
        keys = list(self.sweep)
        if self.sweep_mode == "zip":
            combos = zip(*(self.sweep[k] for k in keys))
        else:
            combos = itertools.product(*(self.sweep[k] for k in keys))
        out = []
        for combo in combos:
            cell = dict(self.params)
            cell.update(zip(keys, combo))
            out.append(cell)
        return out

    def to_dict(self) -> dict:
        return {"mode": self.mode, "game": self.game, "params": self.params, "seeds": self.seeds,
                "sweep": self.sweep, "sweep_mode": self.sweep_mode, "out": self.out, "mixture": self.mixture}


def parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value {text!r}: {exc}") from None


def parse_sweep(spec: str) -> tuple[str, list]:
    """``KEY=v1,v2,...`` to ``(KEY, [v1, v2, ...])``."""
    if "=" not in spec:
        raise ConfigError(f"sweep must look like KEY=v1,v2: {spec!r}")
    key, _, vals = spec.partition("=")
    values = [parse_value(v) for v in vals.split(",") if v != ""]
    if not key or not values:
        raise ConfigError(f"sweep must look like KEY=v1,v2: {spec!r}")
    return key.strip(), values


def load_file(path) -> dict:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a mapping")
    return doc


def build_config(mode: str, file_doc: Optional[dict] = None, *, seed=None, out=None,
                 sweeps=(), sets=(), sweep_mode=None, mixture=None, game_path=None) -> ExperimentConfig:
    doc = dict(file_doc or {})
    file_mode = doc.pop("mode", mode)
    if file_mode != mode:
        raise ConfigError(f"config file is for mode {file_mode!r}, not {mode!r}")
    file_game = doc.pop("game", None) or {}
    if game_path:
        file_game = {"path": str(game_path)}
    game = dict(file_game) if "path" in file_game else {**DEFAULT_GAME, **file_game}
    params = dict(doc.pop("params", None) or {})
    for spec in sets:
        key, _, val = spec.partition("=")
        if not key or not _:
            raise ConfigError(f"--set must look like KEY=VALUE: {spec!r}")
        params[key.strip()] = parse_value(val)
    sweep = dict(doc.pop("sweep", None) or {})
    for spec in sweeps:
        key, values = parse_sweep(spec)
        sweep[key] = values
    seeds = doc.pop("seeds", [0])
    if seed is not None:
        seeds = [seed]
    if not isinstance(seeds, list):
        seeds = [seeds]
    cfg = ExperimentConfig(
        mode=mode,
        game=game,
        params=params,
        seeds=seeds,
        sweep=sweep,
        sweep_mode=sweep_mode or doc.pop("sweep_mode", "product"),
        out=out or doc.pop("out", "out"),
        mixture=mixture or doc.pop("mixture", None),
    )
    doc.pop("sweep_mode", None)
    doc.pop("out", None)
    doc.pop("mixture", None)
    if doc:
        raise ConfigError(f"unknown config keys: {sorted(doc)}")
    return cfg
