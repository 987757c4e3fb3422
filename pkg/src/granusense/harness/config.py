"""Experiment configuration: defaults, file loading, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from ..classify.dataset import DatasetConfig
from ..classify.train import TrainConfig
from ..simcore import MOTOR_PROFILES, load_calibration
from ..tactile import LightingModel

EXPERIMENTS = ("Penetrate", "VibrationSweep", "GenDataset", "Train", "Evaluate", "Predict",
               "Analyze")


class ConfigError(ValueError):
    pass


# Field documentation printed with --print-defaults (kept next to the values).
SCHEMA_DOC = {
    "seed": "global integer seed for every stochastic step",
    "calibration": "path to a calibration JSON; null uses the shipped calibration",
    "lighting": "path to a lighting JSON; null uses three lights 120 deg apart at 45 deg",
    "sweep.media": "calibrated media names to penetrate",
    "sweep.voltages": "motor voltages; each must be one of 0, 6, 8, 10, 12",
    "sweep.max_depth_m": "descent stops here if the force limit is never reached",
    "sweep.sample_rate_hz": "force/position sampling rate",
    "sweep.alpha": "exponential smoothing constant applied to the force",
    "dataset.*": "synthetic corpus generator settings (see DatasetConfig)",
    "train.*": "optimiser and augmentation settings (see TrainConfig)",
    "evaluate.split": "split scored by evaluate and pipeline",
}


def default_config() -> dict:
    return {
        "seed": 0,
        "calibration": None,
        "lighting": None,
        "sweep": {
            "media": ["sand", "rice"],
            "voltages": [0, 6, 8, 10, 12],
            "max_depth_m": 0.1524,
            "sample_rate_hz": 100.0,
            "alpha": 0.1,
        },
        "dataset": DatasetConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "evaluate": {"split": "Test"},
    }


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{name}: unknown config field")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = default_config()
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, doc)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict):
    if not isinstance(cfg.get("seed"), int) or cfg["seed"] < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {cfg.get('seed')!r}")
    sweep = cfg["sweep"]
    for i, v in enumerate(sweep["voltages"]):
        if not isinstance(v, (int, float)) or v not in MOTOR_PROFILES:
            raise ConfigError(
                f"sweep.voltages[{i}]: no vibration profile for {v!r} V "
                f"(known: {sorted(MOTOR_PROFILES)})")
    try:
        calib = load_calibration(cfg["calibration"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"calibration: cannot load {cfg['calibration']}: {exc!r}") from None
    for i, name in enumerate(sweep["media"]):
        if name not in calib.media:
            raise ConfigError(f"sweep.media[{i}]: unknown medium {name!r} "
                              f"(calibrated: {sorted(calib.media)})")
    if not 0 < sweep["alpha"] <= 1:
        raise ConfigError(f"sweep.alpha: must lie in (0, 1], got {sweep['alpha']}")
    if sweep["max_depth_m"] <= 0:
        raise ConfigError("sweep.max_depth_m: must be > 0")
    if sweep["sample_rate_hz"] <= 0:
        raise ConfigError("sweep.sample_rate_hz: must be > 0")
    try:
        DatasetConfig.from_dict(cfg["dataset"])
    except TypeError as exc:
        raise ConfigError(f"dataset: {exc}") from None
    try:
        TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None
    if cfg["lighting"] is not None:
        try:
            LightingModel.load(cfg["lighting"]).check()
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"lighting: {exc}") from None
    if cfg["evaluate"]["split"] not in ("Train", "Val", "Test"):
        raise ConfigError(f"evaluate.split: must be Train, Val or Test, "
                          f"got {cfg['evaluate']['split']!r}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
