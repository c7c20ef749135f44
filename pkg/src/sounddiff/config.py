"""Flat dotted-key run configuration with CLI > file > defaults precedence."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .encoders import Task
from .fusion import FusionMode

# every run option lives here; sidecars serialize the full effective mapping
DEFAULTS: dict[str, Any] = {
    "model.dim": 64,
    "model.layers": 4,
    "model.heads": 4,
    "model.queries": 8,
    "model.seed": 0,
    "schedule.steps": 1000,
    "schedule.beta_start": 1e-4,
    "schedule.beta_end": 0.02,
    "sampler.steps": 250,
    "sampler.scale": 7.0,
    "sampler.seed": 0,
    "trainer.lr": 1e-5,
    "trainer.warmup": 500,
    "trainer.decay_start": 5000,
    "trainer.gamma": 0.9995,
    "trainer.weight_decay": 1e-3,
    "trainer.ema_decay": 0.999,
    "trainer.batch": 16,
    "trainer.steps": 1000,
    "trainer.grad_clip": 0.0,       # 0 disables clipping
    "trainer.drop_all": 0.1,
    "trainer.drop_each": 0.1,
    "trainer.seed": 0,
    "fusion.mode": "full",
    "task": "T2A",
    "data.dir": "",
    "data.clips": 256,
    "data.seed": 0,
    "data.max_categories": 2,
    "data.categories": "",          # comma-joined subset; empty means full vocabulary
    "out.dir": "",
    "bench.n_per_type": 5,
    "bench.sample_steps": 0,        # 0 falls back to sampler.steps
    "sample.text": "",
    "sample.wav": "",
    "sample.mask": "",              # "4-6,7.5-8" seconds
    "sample.video": "",             # .npy of (250, 8, 8) frames
    "sample.count": 1,
    "checkpoint.path": "",
    "eval.generated": "",
    "eval.reference": "",
    "ablate.steps": 300,
    "ablate.eval_clips": 64,
}

_TYPES = {key: type(value) for key, value in DEFAULTS.items()}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value: Any) -> Any:
    want = _TYPES[key]
    if isinstance(value, want) and not (want is int and isinstance(value, bool)):
        return value
    try:
        if want is int:
            as_float = float(value)
            if as_float != int(as_float):
                raise ValueError
            return int(as_float)
        if want is float:
            return float(value)
        if want is str:
            return str(value)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"config key {key!r} expects {want.__name__}, got {value!r}")


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, overlaid by an optional JSON file, overlaid by CLI overrides."""
    config = dict(DEFAULTS)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        loaded.pop("command", None)  # sidecars double as config files
        for key, value in loaded.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            config[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        config[key] = _coerce(key, value)
    validate_config(config)
    return config


def validate_config(cfg: dict[str, Any]) -> None:
    def need(cond: bool, message: str) -> None:
        if not cond:
            raise ConfigError(message)

    need(cfg["model.dim"] >= 2 and cfg["model.dim"] % 2 == 0, "model.dim must be a positive even integer")
    need(cfg["model.dim"] % cfg["model.heads"] == 0, "model.dim must be divisible by model.heads")
    need(cfg["model.layers"] >= 1, "model.layers must be >= 1")
    need(cfg["model.queries"] >= 1, "model.queries must be >= 1")
    need(cfg["schedule.steps"] >= 1, "schedule.steps must be >= 1")
    need(0.0 < cfg["schedule.beta_start"] <= cfg["schedule.beta_end"] < 1.0,
         "need 0 < beta_start <= beta_end < 1")
    need(1 <= cfg["sampler.steps"] <= cfg["schedule.steps"],
         "sampler.steps must be in [1, schedule.steps]")
    need(cfg["sampler.scale"] >= 0.0, "sampler.scale must be >= 0")
    need(cfg["trainer.warmup"] >= 1, "trainer.warmup must be >= 1")
    need(0.0 < cfg["trainer.gamma"] < 1.0, "trainer.gamma must be in (0, 1)")
    need(0.0 < cfg["trainer.ema_decay"] < 1.0, "trainer.ema_decay must be in (0, 1)")
    need(cfg["trainer.batch"] >= 1, "trainer.batch must be >= 1")
    need(0.0 <= cfg["trainer.drop_all"] <= 1.0, "trainer.drop_all must be a probability")
    need(0.0 <= cfg["trainer.drop_each"] <= 1.0, "trainer.drop_each must be a probability")
    need(cfg["fusion.mode"] in [m.value for m in FusionMode],
         f"fusion.mode must be one of {[m.value for m in FusionMode]}")
    need(cfg["task"] in [t.value for t in Task], f"task must be one of {[t.value for t in Task]}")
    need(cfg["bench.n_per_type"] % 5 == 0, "bench.n_per_type must be divisible by 5")
    need(cfg["data.clips"] >= 1, "data.clips must be >= 1")
    need(1 <= cfg["data.max_categories"] <= 5, "data.max_categories must be in 1..5")


def fingerprint_fields(cfg: dict[str, Any]) -> dict[str, Any]:
    """Subset of the config that the checkpoint fingerprint covers."""
    keys = [
        "model.dim", "model.layers", "model.heads", "model.queries", "model.seed",
        "schedule.steps", "schedule.beta_start", "schedule.beta_end", "trainer.seed",
    ]
    return {k: cfg[k] for k in keys}


def write_sidecar(out_dir: str | Path, cfg: dict[str, Any], command: str) -> Path:
    path = Path(out_dir) / "sidecar.json"
    payload = dict(cfg)
    payload["command"] = command
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def read_sidecar_config(path: str | Path) -> dict[str, Any]:
    obj = json.loads(Path(path).read_text())
    obj.pop("command", None)
    cfg = dict(DEFAULTS)
    for key, value in obj.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} in sidecar")
        cfg[key] = _coerce(key, value)
    validate_config(cfg)
    return cfg
