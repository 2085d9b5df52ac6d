"""Synthetic JIGSAWS-format trials with a learnable gesture/kinematics link.

Gestures follow a semi-Markov chain: a state is held for a dwell time drawn
uniformly from ``dwell`` samples, then the next state is drawn from the
transition matrix.  Each class owns

* a constant offset and a sinusoid (class-specific frequency) on the rotation,
  angular-velocity and gripper channels,
* a drift velocity for the four xyz position triplets.

Positions integrate ``v = lag(v_class) + k (home - p)``: the class velocity
passes through a first-order lag so paths are smooth, and the pull towards a
home point keeps them bounded.  Linear-velocity channels carry ``v``.  With
``noise = 0`` and ``subject_sigma = 0`` the per-class offsets make the
class -> kinematics map injective.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataio import (
    BLOCK,
    N_COLUMNS,
    Dataset,
    TrialFiles,
    TrialRecord,
    format_kinematics,
    format_transcript,
    write_manifest,
)
from .errors import ConfigError

SUBJECT_LETTERS = "BCDEFGHI"

_POS = np.concatenate([np.arange(b * BLOCK, b * BLOCK + 3) for b in range(4)])
_VEL = _POS + 12
_OTHER = np.setdiff1d(np.arange(N_COLUMNS), np.concatenate([_POS, _VEL]))
_HOME = np.tile([0.05, 0.02, -0.1], 4)


def cyclic_transitions(n: int) -> np.ndarray:
    """Deterministic chain 0 -> 1 -> ... -> n-1 -> 0."""
    return np.roll(np.eye(n), 1, axis=1)


def random_transitions(n: int, seed: int = 0) -> np.ndarray:
    """Random row-stochastic matrix without self-transitions."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.2, 1.0, size=(n, n))
    np.fill_diagonal(p, 0.0)
    return p / p.sum(axis=1, keepdims=True)


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eig(np.asarray(p).T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(v[:, k])
    return pi / pi.sum()


@dataclass
class SynthConfig:
    n_subjects: int = 4
    trials_per_subject: int = 3
    length: int = 3000
    rate_hz: int = 30
    n_classes: int = 8
    transitions: list | None = None  # None -> random_transitions(n_classes, seed)
    dwell: tuple = (20, 60)
    noise: float = 0.02
    subject_sigma: float = 0.05
    velocity_scale: float = 0.02  # m/s
    pull: float = 0.3  # 1/s, restoring rate towards the home point
    lag: float = 0.2  # s, velocity smoothing time constant
    seed: int = 0
    task_name: str = "Suturing"

    def __post_init__(self):
        if not 1 <= self.n_subjects <= len(SUBJECT_LETTERS):
            raise ConfigError(f"n_subjects must be in 1..{len(SUBJECT_LETTERS)}")
        if self.trials_per_subject < 1 or self.length < 1 or self.rate_hz < 1:
            raise ConfigError("trials_per_subject, length and rate_hz must be positive")
        if not 1 <= self.n_classes <= 16:
            raise ConfigError(f"n_classes must be in 1..16, got {self.n_classes}")
        lo, hi = self.dwell
        if lo < 1 or hi < lo:
            raise ConfigError(f"dwell range must satisfy 1 <= min <= max, got {self.dwell}")
        self.dwell = (int(lo), int(hi))
        p = self.transition_matrix()
        if p.shape != (self.n_classes, self.n_classes):
            raise ConfigError(f"transition matrix must be {self.n_classes}x{self.n_classes}")
        if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > 1e-12:
            raise ConfigError("transition matrix rows must be non-negative and sum to 1")
        if self.noise < 0 or self.subject_sigma < 0:
            raise ConfigError("noise levels must be non-negative")

    def transition_matrix(self) -> np.ndarray:
        if self.transitions is None:
            return random_transitions(self.n_classes, self.seed)
        return np.asarray(self.transitions, dtype=np.float64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dwell"] = list(self.dwell)
        d["transitions"] = self.transition_matrix().tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        if "dwell" in known:
            known["dwell"] = tuple(known["dwell"])
        return cls(**known)


@dataclass
class _ClassBank:
    offset: np.ndarray  # [C, 76]
    freq: np.ndarray  # [C]
    amp: np.ndarray  # [C, 76]
    phase: np.ndarray  # [C, 76]
    velocity: np.ndarray  # [C, 12]


def _class_bank(cfg: SynthConfig) -> _ClassBank:
    rng = np.random.default_rng([cfg.seed, 0])
    C = cfg.n_classes
    offset = rng.normal(0.0, 0.5, size=(C, N_COLUMNS))
    freq = rng.uniform(0.2, 1.2, size=C)
    amp = rng.uniform(0.05, 0.2, size=(C, N_COLUMNS))
    phase = rng.uniform(0, 2 * np.pi, size=(C, N_COLUMNS))
    direction = rng.normal(size=(C, 12))
    direction /= np.linalg.norm(direction.reshape(C, 4, 3), axis=2).repeat(3, axis=1)
    return _ClassBank(offset, freq, amp, phase, direction * cfg.velocity_scale)


def sample_gestures(cfg: SynthConfig, rng: np.random.Generator, length: int | None = None) -> np.ndarray:
    length = cfg.length if length is None else length
    p = cfg.transition_matrix()
    lo, hi = cfg.dwell
    out = np.empty(length, dtype=np.int64)
    state = int(rng.integers(cfg.n_classes))
    i = 0
    while i < length:
        dwell = int(rng.integers(lo, hi + 1))
        out[i:i + dwell] = state
        i += dwell
        state = int(rng.choice(cfg.n_classes, p=p[state]))
    return out


def synthesize_kinematics(cfg: SynthConfig, gestures: np.ndarray, subject_offset: np.ndarray,
                          rng: np.random.Generator, bank: _ClassBank | None = None) -> np.ndarray:
    bank = bank or _class_bank(cfg)
    L = len(gestures)
    dt = 1.0 / cfg.rate_hz
    tau = np.arange(L) * dt
    kin = bank.offset[gestures] + bank.amp[gestures] * np.sin(
        2 * np.pi * bank.freq[gestures][:, None] * tau[:, None] + bank.phase[gestures]
    )
    alpha = dt / (cfg.lag + dt)
    drift = np.zeros(12)
    pos = _HOME.copy()
    positions = np.empty((L, 12))
    velocities = np.empty((L, 12))
    for i, g in enumerate(gestures):
        drift += alpha * (bank.velocity[g] - drift)
        vel = drift + cfg.pull * (_HOME - pos)
        pos = pos + vel * dt
        positions[i] = pos
        velocities[i] = vel
    kin[:, _POS] = positions
    kin[:, _VEL] = velocities
    kin += subject_offset
    if cfg.noise > 0:
        kin[:, _OTHER] += rng.normal(0.0, cfg.noise, size=(L, len(_OTHER)))
        kin[:, _VEL] += rng.normal(0.0, cfg.noise * cfg.velocity_scale, size=(L, 12))
        kin[:, _POS] += rng.normal(0.0, cfg.noise * cfg.velocity_scale * dt, size=(L, 12))
    return kin


def generate_trials(cfg: SynthConfig) -> list[TrialRecord]:
    """All trials in memory, in subject-then-trial order."""
    bank = _class_bank(cfg)
    trials = []
    for s in range(cfg.n_subjects):
        subject = SUBJECT_LETTERS[s]
        srng = np.random.default_rng([cfg.seed, 1, s])
        scale = np.full(N_COLUMNS, cfg.subject_sigma)
        scale[_POS] *= cfg.velocity_scale
        scale[_VEL] *= cfg.velocity_scale
        subject_offset = srng.normal(0.0, 1.0, size=N_COLUMNS) * scale
        for k in range(cfg.trials_per_subject):
            rng = np.random.default_rng([cfg.seed, 2, s, k])
            g = sample_gestures(cfg, rng)
            kin = synthesize_kinematics(cfg, g, subject_offset, rng, bank)
            trial_id = f"{cfg.task_name}_{subject}{k + 1:03d}"
            trials.append(TrialRecord(subject, trial_id, cfg.rate_hz, kin, g))
    return trials


def generate_dataset(cfg: SynthConfig) -> Dataset:
    return Dataset(Path("<memory>"), cfg.rate_hz, generate_trials(cfg))


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write trials, ``manifest.json`` and ``synth_config.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "kinematics").mkdir(parents=True, exist_ok=True)
    (out / "transcriptions").mkdir(parents=True, exist_ok=True)
    files = []
    for trial in generate_trials(cfg):
        kin_path = out / "kinematics" / f"{trial.trial_id}.txt"
        tr_path = out / "transcriptions" / f"{trial.trial_id}.txt"
        kin_path.write_text(format_kinematics(trial.kinematics))
        tr_path.write_text(format_transcript(trial.gestures))
        files.append(TrialFiles(trial.subject_id, trial.trial_id, kin_path, tr_path))
    write_manifest(out, cfg.rate_hz, files)
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def recognition_preset(**overrides) -> SynthConfig:
    """Four subjects, three 100 s trials at 30 Hz, eight classes, low noise."""
    base = dict(n_subjects=4, trials_per_subject=3, length=3000, rate_hz=30, n_classes=8,
                dwell=(30, 90), noise=0.02, subject_sigma=0.05)
    base.update(overrides)
    return SynthConfig(**base)


def prediction_preset(**overrides) -> SynthConfig:
    """Deterministic cyclic chain; dwell jitters +-10% around one second at 30 Hz."""
    base = dict(n_subjects=4, trials_per_subject=3, length=3000, rate_hz=30, n_classes=8,
                transitions=cyclic_transitions(8).tolist(), dwell=(27, 33), noise=0.02,
                subject_sigma=0.05)
    base.update(overrides)
    return SynthConfig(**base)


__all__ = [
    "SynthConfig",
    "cyclic_transitions",
    "generate",
    "generate_dataset",
    "generate_trials",
    "prediction_preset",
    "random_transitions",
    "recognition_preset",
    "stationary_distribution",
]
