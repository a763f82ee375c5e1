"""Strict JSON run configuration: one section per module, unknown keys rejected."""

from __future__ import annotations

import copy
import dataclasses
import json
from pathlib import Path

from .dqnagent import AgentConfig
from .errors import ConfigError
from .synth import SyntheticSpec
from .tgcn import TgcnConfig

# keys owned by the root seed; sections may not set them
_SEEDED = {"seed"}


def _fields(cls):
    return [f.name for f in dataclasses.fields(cls) if f.name not in _SEEDED]


def _defaults(cls):
    inst = cls()
    return {k: _plain(getattr(inst, k)) for k in _fields(cls)}


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


ENV_DEFAULTS = {
    "actions": ["no-action", "review", "urgent-team", "critical-team"],
    "reward": 10.0,
    "monitor_length": 500,
    "node": 0,
    "horizons": [1, 2, 3, 4],
    "source": "replay",
    "advance": False,
}

DEFAULTS = {
    "seed": 0,
    "inputs": {"series": None, "adjacency": None, "bands": None, "forecaster": None,
               "agent": None, "checkpoints": []},
    "data": _defaults(SyntheticSpec),
    "forecast": {**_defaults(TgcnConfig), "models": ["tgcn", "gru", "persistence"],
                 "train_fraction": 0.8, "shared_scale": True},
    "env": ENV_DEFAULTS,
    "agent": _defaults(AgentConfig),
    "run": {"episodes": 50, "steps": None, "eval_episodes": 10, "eval_greedy": False,
            "train_fraction": 0.8},
    "tune": {"target": "forecast", "budget": 20, "episodes": 10,
             "space": [{"name": "lr", "lower": 1e-4, "upper": 1e-1, "scale": "log10"}]},
}


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}; allowed: {sorted(base)}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve(raw: dict | None = None) -> dict:
    """Defaults overlaid with ``raw``; any key not in the defaults is an error."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULTS, raw, "")


def load(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return resolve(raw)


def apply_override(cfg: dict, assignment: str) -> dict:
    """``section.key=value`` with a JSON value (bare strings allowed)."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like section.key=value, got {assignment!r}")
    dotted, text = assignment.split("=", 1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    patch: dict = {}
    node = patch
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return _merge(cfg, patch, "")


def synthetic_spec(cfg) -> SyntheticSpec:
    return SyntheticSpec(**cfg["data"], seed=cfg["seed"])


def tgcn_config(cfg, n_nodes: int) -> TgcnConfig:
    f = {k: v for k, v in cfg["forecast"].items() if k in _fields(TgcnConfig)}
    f["n_nodes"] = n_nodes
    f["horizons"] = tuple(f["horizons"])
    return TgcnConfig(**f, seed=cfg["seed"])


def agent_config(cfg) -> AgentConfig:
    return AgentConfig(**cfg["agent"], seed=cfg["seed"])
