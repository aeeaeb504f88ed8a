"""Run configuration: TOML files with nested sections, ``--set a.b=value`` overrides."""

from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

DEFAULTS: dict = {
    "seed": 0,
    "data": {"train": "", "eval": "", "features_dir": ""},
    "features": {"n": 32, "l_query": 64, "l_decoder": 64, "channels": 32},
    "adapter": {"depth": 2, "heads": 4},
    "lm": {"width": 64, "depth": 2, "heads": 4, "max_positions": 128, "pretrain_epochs": 8,
           "corpus": "", "synthetic_corpus_size": 1000},
    "train": {"batch_size": 16, "lr": 1e-4, "weight_decay": 0.01, "max_epochs": 20,
              "lr_milestones": [12, 17], "lr_gamma": 0.1, "grad_clip": 1.0},
    "eval": {"max_len": 40},
    "synthetic": {"n_samples": 8, "mix": "default", "max_boxes": 3, "split_ratio": 0.7, "write_features": False},
}


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def read_config(path) -> dict:
    """TOML file, or the JSON manifest of an earlier run (its ``config`` snapshot)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            raw = json.loads(path.read_text(encoding="utf-8"))
            return raw["config"] if "config" in raw and "command" in raw else raw
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


def parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    key, sep, value = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p!r} is not a section")
    if len(parts) == 1 and parts[0] not in cfg and parts[0] in DEFAULTS["train"]:
        node = cfg.setdefault("train", {})  # bare training keys, e.g. --set lr=0
    node[parts[-1]] = parse_value(value.strip())


def resolve(path=None, overrides=(), seed=None) -> dict:
    cfg = merge(DEFAULTS, read_config(path)) if path else copy.deepcopy(DEFAULTS)
    for o in overrides:
        apply_override(cfg, o)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg
