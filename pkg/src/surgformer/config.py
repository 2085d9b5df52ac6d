"""Run configuration files.

A run config is a JSON document with ``"schema": 1``.  Every key is optional
except where a command needs it; CLI flags override file values.

    {
      "schema": 1,
      "task": "recognition",            # | gesture_prediction | trajectory_prediction
      "dataset": "data/jigsaws",         # or "synth": {...SynthConfig fields...} / "synth": "path.json"
      "arm": "PSM",
      "rate_hz": 30,                     # default 30 for recognition, 10 otherwise
      "t_obs_s": 1.0, "t_pred_s": 1.0,
      "train_stride": 1, "eval_stride": 1,
      "model": {...ModelConfig overrides...},
      "train": {...TrainConfig overrides...},
      "seed": 0,
      "out": "runs/rec",
      "plots": false,
      "grid": {"n_layers": [1, 4], "heads_enc": [1], "heads_dec": [1, 4]},
      "checkpoint": "runs/rec-train",     # infer
      "chain": {"recognition": "...", "gesture_prediction": "...", "trajectory_prediction": "..."}
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataio import Task, WindowSpec, task_dims
from .errors import ConfigError
from .transformer import (
    GESTURE_PREDICTION_CONFIG,
    RECOGNITION_CONFIG,
    TRAJECTORY_CONFIG,
    ModelConfig,
)
from .training import TrainConfig

SCHEMA_VERSION = 1

TASK_DEFAULTS = {
    Task.RECOGNITION: (RECOGNITION_CONFIG, 30),
    Task.GESTURE_PREDICTION: (GESTURE_PREDICTION_CONFIG, 10),
    Task.TRAJECTORY_PREDICTION: (TRAJECTORY_CONFIG, 10),
}

_KNOWN = {
    "schema", "command", "task", "dataset", "synth", "arm", "rate_hz", "t_obs_s", "t_pred_s",
    "train_stride", "eval_stride", "model", "train", "seed", "out", "plots", "grid",
    "checkpoint", "chain", "subjects", "train_subjects",
}


@dataclass
class RunConfig:
    task: Task = Task.RECOGNITION
    dataset: str | None = None
    synth: dict | None = None
    arm: str = "PSM"
    rate_hz: int | None = None
    t_obs_s: float = 1.0
    t_pred_s: float = 1.0
    train_stride: int = 1
    eval_stride: int = 1
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None
    plots: bool = False
    grid: dict | None = None
    checkpoint: str | None = None
    chain: dict | None = None
    subjects: list | None = None
    train_subjects: list | None = None
    command: str | None = None

    def __post_init__(self):
        self.task = Task.parse(self.task)
        self.arm = str(self.arm).upper()
        if self.arm not in ("MTM", "PSM"):
            raise ConfigError(f"arm must be MTM or PSM, got {self.arm!r}")
        if self.rate_hz is None:
            self.rate_hz = TASK_DEFAULTS[self.task][1]
        if self.train_stride < 1 or self.eval_stride < 1:
            raise ConfigError("strides must be >= 1")
        self.t_obs = self._samples(self.t_obs_s, "t_obs_s")
        self.t_pred = self._samples(self.t_pred_s, "t_pred_s") if self.task is not Task.RECOGNITION else 0

    def _samples(self, seconds: float, name: str) -> int:
        n = seconds * self.rate_hz
        if n <= 0 or not math.isclose(n, round(n), abs_tol=1e-9):
            raise ConfigError(f"{name}={seconds} s at {self.rate_hz} Hz is not a whole number of samples")
        return int(round(n))

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.task, self.t_obs, self.t_pred, self.train_stride)

    def model_config(self) -> ModelConfig:
        base, _ = TASK_DEFAULTS[self.task]
        d_enc, d_dec, d_out = task_dims(self.task)
        for key, want in (("d_enc", d_enc), ("d_dec", d_dec), ("d_out", d_out)):
            if key in self.model and self.model[key] != want:
                raise ConfigError(
                    f"{self.task.value} requires {key}={want} (d_enc, d_dec, d_out = "
                    f"{d_enc}, {d_dec}, {d_out}); config gives {self.model[key]}"
                )
        overrides = {k: v for k, v in self.model.items() if k not in ("d_enc", "d_dec", "d_out")}
        merged = {**base.to_dict(), **overrides, "d_enc": d_enc, "d_dec": d_dec, "d_out": d_out}
        merged["max_len"] = max(merged["max_len"], self.t_obs, self.t_pred)
        return ModelConfig.from_dict(merged)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "task": self.task.value, "seed": self.train.get("seed", self.seed)})

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["task"] = self.task.value
        d["schema"] = SCHEMA_VERSION
        return d


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc: dict = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        base_dir = path.parent
        schema = doc.get("schema", SCHEMA_VERSION)
        if schema != SCHEMA_VERSION:
            raise ConfigError(f"config schema {schema!r} is not supported (expected {SCHEMA_VERSION})")
    unknown = set(doc) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    doc = {k: v for k, v in doc.items() if k != "schema"}
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    if isinstance(doc.get("synth"), str):
        synth_path = _resolve(doc["synth"], base_dir)
        try:
            doc["synth"] = json.loads(Path(synth_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read synth config {synth_path}: {exc}") from None
    for key in ("dataset", "checkpoint"):
        if doc.get(key) is not None:
            doc[key] = str(_resolve(doc[key], base_dir))
    if doc.get("chain"):
        doc["chain"] = {k: str(_resolve(v, base_dir)) for k, v in doc["chain"].items()}
    try:
        return RunConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _resolve(p, base_dir):
    p = Path(p)
    if base_dir is not None and not p.is_absolute() and not p.exists():
        cand = base_dir / p
        if cand.exists():
            return cand
    return p


__all__ = ["RunConfig", "load_run_config", "replace"]
