"""JSON configuration for the CLI.

A config file is one JSON object with up to three sections:

    {
      "train":    { ... TrainConfig fields, nested "dataset"/"model" ... },
      "simulate": { "seed": 0, "count": 4, "width": 32, "height": 32,
                     "bands": 8, "step": 1, "mask_seed": 7,
                     "noise_sigma": 0.0, "kinds": ["gaussian_blobs", ...] },
      "gap_tv":   { "iterations": 50, "tv_weight": 0.05, "tv_inner": 8 }
    }

Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .physics import _SCENE_KINDS
from .training import TrainConfig, config_from_dict

_TOP_KEYS = {"train", "simulate", "gap_tv"}
_SIM_DEFAULTS = {
    "seed": 0,
    "count": 4,
    "width": 32,
    "height": 32,
    "bands": 8,
    "step": 1,
    "mask_seed": 7,
    "noise_sigma": 0.0,
    "kinds": list(_SCENE_KINDS),
}
_GAP_DEFAULTS = {"iterations": 50, "tv_weight": 0.05, "tv_inner": 8}


@dataclass
class SimulateSpec:
    seed: int = 0
    count: int = 4
    width: int = 32
    height: int = 32
    bands: int = 8
    step: int = 1
    mask_seed: int = 7
    noise_sigma: float = 0.0
    kinds: list[str] = field(default_factory=lambda: list(_SCENE_KINDS))


@dataclass
class GapTvSpec:
    iterations: int = 50
    tv_weight: float = 0.05
    tv_inner: int = 8


def load_config(path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")
    return obj


def _section(obj: dict, name: str, defaults: dict) -> dict:
    section = obj.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"config section {name!r} has unknown keys {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


def simulate_spec(obj: dict) -> SimulateSpec:
    vals = _section(obj, "simulate", _SIM_DEFAULTS)
    spec = SimulateSpec(**vals)
    if spec.count < 1:
        raise ConfigError("simulate.count must be >= 1")
    bad = [k for k in spec.kinds if k not in _SCENE_KINDS]
    if bad:
        raise ConfigError(f"simulate.kinds contains unknown kinds {bad}")
    return spec


def gap_tv_spec(obj: dict) -> GapTvSpec:
    vals = _section(obj, "gap_tv", _GAP_DEFAULTS)
    spec = GapTvSpec(**vals)
    if spec.iterations < 1:
        raise ConfigError("gap_tv.iterations must be >= 1")
    return spec


def train_config(obj: dict, phase: int) -> TrainConfig:
    section = obj.get("train")
    if section is None:
        cfg = TrainConfig()
    else:
        if not isinstance(section, dict):
            raise ConfigError("config section 'train' must be an object")
        try:
            cfg = config_from_dict(section)
        except TypeError as exc:
            raise ConfigError(f"config section 'train': {exc}") from None
    cfg.phase = phase
    return cfg
