"""JIGSAWS-format ingestion, decimation, one-hot encoding and windowing.

File formats
------------
Kinematics: one sample per line, 76 whitespace-separated floats.  Column
blocks of 19 (position 3, rotation matrix 9, linear velocity 3, angular
velocity 3, gripper angle 1) in the order MTM-left, MTM-right, PSM-left,
PSM-right.

Transcript: lines ``start end G<k>``; ``start``/``end`` are 1-based inclusive
sample indices at the kinematics rate, ``k`` in 1..15.  Samples not covered
by any span get class 0.

Dataset manifest (``manifest.json`` at the dataset root)::

    {"schema": 1, "rate_hz": 30,
     "subjects": {"B": [{"trial_id": "Suturing_B001",
                         "kinematics": "kinematics/Suturing_B001.txt",
                         "transcript": "transcriptions/Suturing_B001.txt"}]}}

Paths are relative to the manifest.  Without a manifest the native JIGSAWS
layout is scanned: ``kinematics/AllGestures/<Task>_<S><NNN>.txt`` and
``transcriptions/<Task>_<S><NNN>.txt``, subject = the letter ``S``.
"""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

N_COLUMNS = 76
BLOCK = 19
N_CLASSES = 16
ARM_COLUMNS = {"MTM": slice(0, 38), "PSM": slice(38, 76)}
# xyz of the left and right manipulator inside a 38-column arm block.
POSITION_COLUMNS = np.array([0, 1, 2, 19, 20, 21])
MANIFEST_NAME = "manifest.json"

_SPAN = re.compile(r"^\s*(\d+)\s+(\d+)\s+G(\d+)\s*$")
_TRIAL = re.compile(r"^(?P<task>[A-Za-z_]+?)_(?P<subject>[A-Z])(?P<num>\d{3})$")


class Task(str, enum.Enum):
    RECOGNITION = "recognition"
    GESTURE_PREDICTION = "gesture_prediction"
    TRAJECTORY_PREDICTION = "trajectory_prediction"

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, Task):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            raise ConfigError(f"unknown task {value!r}; choose from {[t.value for t in cls]}") from None


@dataclass
class TrialRecord:
    subject_id: str
    trial_id: str
    rate_hz: int
    kinematics: np.ndarray
    gestures: np.ndarray

    def __post_init__(self):
        self.kinematics = np.asarray(self.kinematics, dtype=np.float64)
        self.gestures = np.asarray(self.gestures, dtype=np.int64)
        if self.kinematics.ndim != 2 or self.kinematics.shape[1] not in (N_COLUMNS, 38):
            raise DataError(f"{self.trial_id}: kinematics shape {self.kinematics.shape}")
        if len(self.kinematics) != len(self.gestures):
            raise DataError(
                f"{self.trial_id}: {len(self.kinematics)} kinematic rows vs {len(self.gestures)} labels"
            )
        if self.gestures.size and (self.gestures.min() < 0 or self.gestures.max() >= N_CLASSES):
            raise DataError(f"{self.trial_id}: gesture labels outside 0..15")

    def __len__(self):
        return len(self.gestures)


def parse_kinematics(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != N_COLUMNS:
                raise DataError(f"{path}: line {lineno} has {len(tokens)} columns, expected {N_COLUMNS}")
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise DataError(f"{path}: line {lineno} has a non-numeric token") from None
    if not rows:
        return np.zeros((0, N_COLUMNS))
    return np.array(rows, dtype=np.float64)


def parse_transcript(path, length: int) -> np.ndarray:
    labels = np.zeros(length, dtype=np.int64)
    covered = np.zeros(length, dtype=bool)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            m = _SPAN.match(line)
            if m is None:
                raise DataError(f"{path}: line {lineno} is not 'start end G<k>': {line.strip()!r}")
            start, end, k = (int(g) for g in m.groups())
            if not 1 <= k <= 15:
                raise DataError(f"{path}: line {lineno}: gesture G{k} outside G1..G15")
            if not 1 <= start <= end <= length:
                raise DataError(f"{path}: line {lineno}: span {start}-{end} outside [1, {length}]")
            if covered[start - 1:end].any():
                raise DataError(f"{path}: line {lineno}: span {start}-{end} overlaps an earlier span")
            covered[start - 1:end] = True
            labels[start - 1:end] = k
    return labels


def format_transcript(gestures) -> str:
    """Inverse of ``parse_transcript``; class-0 runs are left uncovered."""
    g = np.asarray(gestures)
    lines = []
    start = 0
    for i in range(1, len(g) + 1):
        if i == len(g) or g[i] != g[start]:
            if g[start] != 0:
                lines.append(f"{start + 1} {i} G{int(g[start])}")
            start = i
    return "\n".join(lines) + ("\n" if lines else "")


def format_kinematics(kin: np.ndarray) -> str:
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in kin)


def select_arm(kinematics: np.ndarray, arm: str) -> np.ndarray:
    if kinematics.shape[1] == 38:
        return kinematics
    try:
        return kinematics[:, ARM_COLUMNS[arm.upper()]]
    except KeyError:
        raise ConfigError(f"arm must be MTM or PSM, got {arm!r}") from None


def downsample(trial: TrialRecord, factor: int = 3) -> TrialRecord:
    """Keep every ``factor``-th sample from index 0; length becomes floor(L / factor)."""
    if factor < 1:
        raise ConfigError(f"downsample factor must be >= 1, got {factor}")
    if trial.rate_hz % factor:
        raise ConfigError(f"rate {trial.rate_hz} Hz is not divisible by factor {factor}")
    n = len(trial) // factor
    idx = np.arange(n) * factor
    return TrialRecord(trial.subject_id, trial.trial_id, trial.rate_hz // factor,
                       trial.kinematics[idx], trial.gestures[idx])


def one_hot(g, n_classes: int = N_CLASSES) -> np.ndarray:
    g = np.asarray(g, dtype=np.int64)
    if g.size and (g.min() < 0 or g.max() >= n_classes):
        raise DataError(f"gesture index outside 0..{n_classes - 1}: {g}")
    return np.eye(n_classes)[g]


@dataclass
class Standardizer:
    """Per-feature z-scoring fitted on training trials only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, arrays) -> "Standardizer":
        stacked = np.concatenate(list(arrays), axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, z, columns=None):
        if columns is None:
            return np.asarray(z) * self.std + self.mean
        return np.asarray(z) * self.std[columns] + self.mean[columns]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class WindowSpec:
    task: Task
    t_obs: int
    t_pred: int = 0
    stride: int = 1

    def __post_init__(self):
        self.task = Task.parse(self.task)
        if self.t_obs < 1 or self.stride < 1:
            raise ConfigError(f"window sizes must be positive (t_obs={self.t_obs}, stride={self.stride})")
        if self.task is not Task.RECOGNITION:
            if self.t_pred < 1:
                raise ConfigError("prediction tasks need t_pred >= 1")
            if self.t_pred != self.t_obs:
                raise ConfigError(
                    f"prediction tasks align decoder rows with the observation window; "
                    f"t_obs ({self.t_obs}) must equal t_pred ({self.t_pred})"
                )

    @property
    def span(self) -> int:
        return self.t_obs if self.task is Task.RECOGNITION else self.t_obs + self.t_pred

    @property
    def dec_len(self) -> int:
        return self.t_obs if self.task is Task.RECOGNITION else self.t_pred

    def starts(self, length: int) -> range:
        return range(0, length - self.span + 1, self.stride)

    def count(self, length: int) -> int:
        return max(0, (length - self.span) // self.stride + 1) if length >= self.span else 0


def task_dims(task) -> tuple[int, int, int]:
    """(d_enc, d_dec, d_out) for a task."""
    task = Task.parse(task)
    if task is Task.TRAJECTORY_PREDICTION:
        return 38 + N_CLASSES, len(POSITION_COLUMNS) + N_CLASSES, len(POSITION_COLUMNS)
    return 38, N_CLASSES, N_CLASSES


class PreparedTrial:
    """Per-trial feature matrices from which frames are cut without copying."""

    def __init__(self, trial: TrialRecord, arm: str = "PSM", standardizer: Standardizer | None = None):
        kin = select_arm(trial.kinematics, arm)
        if standardizer is not None:
            kin = standardizer.transform(kin)
        self.trial = trial
        self.kin = np.ascontiguousarray(kin)
        self.onehot = one_hot(trial.gestures)
        self.positions = np.ascontiguousarray(self.kin[:, POSITION_COLUMNS])
        self._kin_gest = None

    @property
    def kin_gest(self):
        if self._kin_gest is None:
            self._kin_gest = np.concatenate([self.kin, self.onehot], axis=1)
        return self._kin_gest

    def __len__(self):
        return len(self.trial)


@dataclass(frozen=True)
class Frame:
    """One windowed sample.  Arrays are materialised on access."""

    spec: WindowSpec
    source: PreparedTrial = field(repr=False, compare=False)
    t: int

    @property
    def task(self) -> Task:
        return self.spec.task

    @property
    def origin(self) -> tuple[str, str, int]:
        tr = self.source.trial
        return tr.subject_id, tr.trial_id, self.t

    @property
    def subject_id(self) -> str:
        return self.source.trial.subject_id

    @property
    def enc_in(self) -> np.ndarray:
        src, t, T = self.source, self.t, self.spec.t_obs
        if self.task is Task.TRAJECTORY_PREDICTION:
            return src.kin_gest[t:t + T]
        return src.kin[t:t + T]

    def dec_in(self, shift_row: np.ndarray | None = None) -> np.ndarray:
        """Decoder input.  For recognition it is the target shifted right by one
        with ``shift_row`` (default zeros) in row 0."""
        src, t, s = self.source, self.t, self.spec
        if self.task is Task.RECOGNITION:
            out = np.empty((s.t_obs, N_CLASSES))
            out[0] = 0.0 if shift_row is None else shift_row
            out[1:] = src.onehot[t:t + s.t_obs - 1]
            return out
        if self.task is Task.GESTURE_PREDICTION:
            return src.onehot[t:t + s.t_obs]
        fut = t + s.t_obs
        return np.concatenate([src.positions[t:t + s.t_pred], src.onehot[fut:fut + s.t_pred]], axis=1)

    @property
    def target(self) -> np.ndarray:
        src, t, s = self.source, self.t, self.spec
        if self.task is Task.RECOGNITION:
            return src.onehot[t:t + s.t_obs]
        fut = t + s.t_obs
        if self.task is Task.GESTURE_PREDICTION:
            return src.onehot[fut:fut + s.t_pred]
        return src.positions[fut:fut + s.t_pred]

    @property
    def target_labels(self) -> np.ndarray:
        s = self.spec
        g = self.source.trial.gestures
        if self.task is Task.RECOGNITION:
            return g[self.t:self.t + s.t_obs]
        fut = self.t + s.t_obs
        return g[fut:fut + s.t_pred]


def make_frames(trial, spec: WindowSpec, arm: str = "PSM", standardizer: Standardizer | None = None) -> list[Frame]:
    """Cut sliding windows from one trial.  A trial shorter than the window
    yields an empty list."""
    prepared = trial if isinstance(trial, PreparedTrial) else PreparedTrial(trial, arm, standardizer)
    return [Frame(spec, prepared, t) for t in spec.starts(len(prepared))]


def stack_frames(frames, shift_rows: np.ndarray | None = None):
    """Batch arrays ``(enc [B,T,d_enc], dec [B,T,d_dec], target [B,T,d_t])``."""
    enc = np.stack([f.enc_in for f in frames])
    if shift_rows is None:
        dec = np.stack([f.dec_in() for f in frames])
    else:
        dec = np.stack([f.dec_in(r) for f, r in zip(frames, shift_rows)])
    tgt = np.stack([f.target for f in frames])
    return enc, dec, tgt


def reassemble_labels(window_labels, starts, length: int, n_classes: int = N_CLASSES) -> np.ndarray:
    """Majority vote over overlapping per-window label rows; uncovered -> -1."""
    votes = np.zeros((length, n_classes), dtype=np.int64)
    for labels, t in zip(window_labels, starts):
        labels = np.asarray(labels)
        votes[np.arange(t, t + len(labels)), labels] += 1
    out = votes.argmax(axis=1)
    out[votes.sum(axis=1) == 0] = -1
    return out


# ---------------------------------------------------------------- datasets

@dataclass
class TrialFiles:
    subject_id: str
    trial_id: str
    kinematics: Path
    transcript: Path


@dataclass
class Dataset:
    root: Path
    rate_hz: int
    trials: list[TrialRecord]

    @property
    def subjects(self) -> list[str]:
        return sorted({t.subject_id for t in self.trials})

    def by_subject(self) -> dict[str, list[TrialRecord]]:
        out: dict[str, list[TrialRecord]] = {}
        for t in self.trials:
            out.setdefault(t.subject_id, []).append(t)
        return dict(sorted(out.items()))

    def downsampled(self, factor: int) -> "Dataset":
        if factor == 1:
            return self
        return Dataset(self.root, self.rate_hz // factor, [downsample(t, factor) for t in self.trials])


def read_manifest(root) -> tuple[int, list[TrialFiles]]:
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if doc.get("schema") != 1:
        raise DataError(f"{path}: unsupported manifest schema {doc.get('schema')!r}")
    files = []
    for subject, entries in sorted(doc["subjects"].items()):
        for e in entries:
            files.append(TrialFiles(subject, e["trial_id"], root / e["kinematics"], root / e["transcript"]))
    return int(doc.get("rate_hz", 30)), files


def write_manifest(root, rate_hz: int, files: list[TrialFiles]) -> Path:
    root = Path(root)
    subjects: dict[str, list] = {}
    for f in files:
        subjects.setdefault(f.subject_id, []).append({
            "trial_id": f.trial_id,
            "kinematics": Path(f.kinematics).relative_to(root).as_posix(),
            "transcript": Path(f.transcript).relative_to(root).as_posix(),
        })
    doc = {"schema": 1, "rate_hz": rate_hz, "subjects": dict(sorted(subjects.items()))}
    path = root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def scan_jigsaws(root) -> list[TrialFiles]:
    root = Path(root)
    kin_dir = root / "kinematics" / "AllGestures"
    if not kin_dir.is_dir():
        kin_dir = root / "kinematics"
    tr_dir = root / "transcriptions"
    files = []
    for tr in sorted(tr_dir.glob("*.txt")):
        m = _TRIAL.match(tr.stem)
        kin = kin_dir / tr.name
        if m is None or not kin.exists():
            continue
        files.append(TrialFiles(m["subject"], tr.stem, kin, tr))
    return files


def load_dataset(root, subjects=None) -> Dataset:
    root = Path(root)
    if not root.exists():
        raise DataError(f"dataset path {root} does not exist")
    if (root / MANIFEST_NAME).exists():
        rate, files = read_manifest(root)
    else:
        rate, files = 30, scan_jigsaws(root)
    if not files:
        raise DataError(f"no trials found under {root}")
    trials = []
    for f in files:
        if subjects is not None and f.subject_id not in subjects:
            continue
        kin = parse_kinematics(f.kinematics)
        trials.append(TrialRecord(f.subject_id, f.trial_id, rate, kin, parse_transcript(f.transcript, len(kin))))
    return Dataset(root, rate, trials)


def label_histogram(gestures, n_classes: int = N_CLASSES) -> np.ndarray:
    counts = Counter(int(g) for g in np.asarray(gestures).ravel())
    total = sum(counts.values())
    return np.array([counts.get(k, 0) / total for k in range(n_classes)])
