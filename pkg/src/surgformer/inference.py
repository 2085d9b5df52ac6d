"""Recurrent decoding for recognition, single-shot decoding for prediction,
and the optional chained mode that feeds estimates from one task into the
next."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataio import N_CLASSES, POSITION_COLUMNS, Standardizer, Task, WindowSpec, one_hot, select_arm
from .errors import ConfigError, ShapeError
from .numerics.tensor import Tensor, no_grad
from .numerics import ops
from .transformer import TransformerModel

DEFAULT_BATCH = 1024


@dataclass
class RecognitionResult:
    probabilities: np.ndarray  # [T, 16] or [B, T, 16]
    labels: np.ndarray

    def __post_init__(self):
        if self.labels is None:
            self.labels = self.probabilities.argmax(axis=-1)


@dataclass
class TrajectoryResult:
    positions: np.ndarray  # [T_pred, 6] or [B, T_pred, 6]


def window_seed(seed: int, trial_id: str, t: int) -> list[int]:
    """Seed material for the random start vector of one recognition window."""
    return [int(seed) & 0xFFFFFFFF, zlib.crc32(trial_id.encode()), int(t)]


def start_vector(seed) -> np.ndarray:
    """Random decoder start row, uniform on [0, 1)^16."""
    return np.random.default_rng(seed).random(N_CLASSES)


def _check_model(model: TransformerModel, d_enc: int, d_dec: int, what: str):
    c = model.config
    if c.d_enc != d_enc or c.d_dec != d_dec:
        raise ConfigError(f"{what} needs a model with (d_enc, d_dec) = ({d_enc}, {d_dec}), "
                          f"got ({c.d_enc}, {c.d_dec})")


def recognize_batch(model: TransformerModel, enc_in: np.ndarray, start_rows: np.ndarray,
                    return_trace: bool = False):
    """Decode T_obs labels per window.  Iteration j feeds ``[R, g_1 .. g_{j-1}]``
    and reads output row j-1; the argmax is re-fed as a one-hot row."""
    _check_model(model, 38, N_CLASSES, "recognition")
    enc_in = np.asarray(enc_in, dtype=np.float64)
    if enc_in.ndim != 3 or enc_in.shape[-1] != 38:
        raise ShapeError(f"recognition input must be [B, T, 38], got {enc_in.shape}")
    B, T, _ = enc_in.shape
    probs = np.empty((B, T, N_CLASSES))
    labels = np.empty((B, T), dtype=np.int64)
    dec = np.empty((B, T, N_CLASSES))
    dec[:, 0] = start_rows
    trace = []
    with no_grad():
        memory = model.encode(enc_in, train_mode=False)
        for j in range(1, T + 1):
            out = model.decode(dec[:, :j], memory, train_mode=False)
            p = ops.softmax(out[:, j - 1], axis=-1).data
            probs[:, j - 1] = p
            labels[:, j - 1] = p.argmax(axis=-1)
            if j < T:
                dec[:, j] = one_hot(labels[:, j - 1])
            if return_trace:
                trace.append(out.data.argmax(axis=-1).copy())
    result = RecognitionResult(probs, labels)
    return (result, trace) if return_trace else result


def recognize(model: TransformerModel, enc_in, seed) -> RecognitionResult:
    """Recognise one window ``[T_obs, 38]``; ``seed`` fixes the start vector."""
    enc_in = np.asarray(enc_in, dtype=np.float64)
    if enc_in.ndim != 2:
        raise ShapeError(f"recognize() takes one window [T, 38], got {enc_in.shape}")
    res = recognize_batch(model, enc_in[None], start_vector(seed)[None])
    return RecognitionResult(res.probabilities[0], res.labels[0])


def _forward(model, enc_in, dec_in):
    enc_in = np.asarray(enc_in, dtype=np.float64)
    dec_in = np.asarray(dec_in, dtype=np.float64)
    if enc_in.ndim != dec_in.ndim or enc_in.shape[:-2] != dec_in.shape[:-2]:
        raise ShapeError(f"encoder input {enc_in.shape} and decoder input {dec_in.shape} disagree")
    with no_grad():
        return model.forward(enc_in, dec_in, train_mode=False).data


def predict_gestures(model: TransformerModel, enc_in, dec_in) -> RecognitionResult:
    """One forward pass: current kinematics + current gestures -> future gestures."""
    _check_model(model, 38, N_CLASSES, "gesture prediction")
    logits = _forward(model, enc_in, dec_in)
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=-1, keepdims=True)
    return RecognitionResult(p, p.argmax(axis=-1))


def predict_trajectory(model: TransformerModel, enc_in, dec_in) -> TrajectoryResult:
    """One forward pass: kinematics+gestures, current positions+future gestures
    -> future positions (in the model's standardised units)."""
    _check_model(model, 38 + N_CLASSES, len(POSITION_COLUMNS) + N_CLASSES, "trajectory prediction")
    return TrajectoryResult(_forward(model, enc_in, dec_in))


def batched(n: int, size: int = DEFAULT_BATCH):
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


# ------------------------------------------------------------ trained models

@dataclass
class TrainedModel:
    """A model plus everything needed to apply it to raw 76-column kinematics."""

    model: TransformerModel
    task: Task
    arm: str
    rate_hz: int
    t_obs: int
    t_pred: int
    standardizer: Standardizer
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> WindowSpec:
        return WindowSpec(self.task, self.t_obs, self.t_pred)

    def features(self, raw_kin: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(select_arm(np.asarray(raw_kin), self.arm))

    def positions_to_metres(self, z: np.ndarray) -> np.ndarray:
        return self.standardizer.inverse(z, POSITION_COLUMNS)

    def positions_from_metres(self, p: np.ndarray) -> np.ndarray:
        cols = POSITION_COLUMNS
        return (np.asarray(p) - self.standardizer.mean[cols]) / self.standardizer.std[cols]


@dataclass
class ChainResult:
    current_labels: np.ndarray  # [B, T_obs]
    future_labels: np.ndarray  # [B, T_pred]
    positions: np.ndarray  # [B, T_pred, 6], metres


def chain(rec, pred, traj, raw_windows: np.ndarray, current_positions: np.ndarray, seed: int = 0,
          starts=None) -> ChainResult:
    """Feed recognised gestures into gesture prediction, and predicted gestures
    into trajectory prediction.

    ``rec``, ``pred`` and ``traj`` expose ``rate_hz``, ``t_obs``, ``t_pred`` and
    the methods ``recognize(raw_windows, seeds)``, ``predict(raw_windows,
    current_labels)`` and ``predict(raw_windows, current_labels,
    current_positions, future_labels)`` respectively (see the adapters below).
    ``raw_windows`` is ``[B, T_obs, 76]``; ``current_positions`` is
    ``[B, T_pred, 6]`` in metres.
    """
    rates = {rec.rate_hz, pred.rate_hz, traj.rate_hz}
    if len(rates) != 1:
        raise ConfigError(f"chained models disagree on sampling rate: {sorted(rates)} Hz")
    if not rec.t_obs == pred.t_obs == traj.t_obs:
        raise ConfigError(f"observation windows differ: {rec.t_obs}, {pred.t_obs}, {traj.t_obs}")
    if pred.t_pred != traj.t_pred:
        raise ConfigError(f"prediction windows differ: {pred.t_pred} vs {traj.t_pred}")
    B = len(raw_windows)
    starts = np.arange(B) if starts is None else np.asarray(starts)
    seeds = [[int(seed) & 0xFFFFFFFF, int(t)] for t in starts]
    current = rec.recognize(raw_windows, seeds)
    future = pred.predict(raw_windows, current)
    positions = traj.predict(raw_windows, current, current_positions, future)
    return ChainResult(current, future, positions)


class RecognizerAdapter:
    def __init__(self, tm: TrainedModel):
        self.tm, self.rate_hz, self.t_obs, self.t_pred = tm, tm.rate_hz, tm.t_obs, tm.t_obs

    def recognize(self, raw_windows, seeds):
        enc = np.stack([self.tm.features(w) for w in raw_windows])
        starts = np.stack([start_vector(s) for s in seeds])
        labels = np.empty(enc.shape[:2], dtype=np.int64)
        for sl in batched(len(enc)):
            labels[sl] = recognize_batch(self.tm.model, enc[sl], starts[sl]).labels
        return labels


class GesturePredictorAdapter:
    def __init__(self, tm: TrainedModel):
        self.tm, self.rate_hz, self.t_obs, self.t_pred = tm, tm.rate_hz, tm.t_obs, tm.t_pred

    def predict(self, raw_windows, current_labels):
        enc = np.stack([self.tm.features(w) for w in raw_windows])
        dec = one_hot(current_labels)
        out = np.empty((len(enc), self.t_pred), dtype=np.int64)
        for sl in batched(len(enc)):
            out[sl] = predict_gestures(self.tm.model, enc[sl], dec[sl]).labels
        return out


class TrajectoryPredictorAdapter:
    def __init__(self, tm: TrainedModel):
        self.tm, self.rate_hz, self.t_obs, self.t_pred = tm, tm.rate_hz, tm.t_obs, tm.t_pred

    def predict(self, raw_windows, current_labels, current_positions, future_labels):
        kin = np.stack([self.tm.features(w) for w in raw_windows])
        enc = np.concatenate([kin, one_hot(current_labels)], axis=-1)
        dec = np.concatenate([self.tm.positions_from_metres(current_positions), one_hot(future_labels)], axis=-1)
        out = np.empty((len(enc), self.t_pred, len(POSITION_COLUMNS)))
        for sl in batched(len(enc)):
            out[sl] = predict_trajectory(self.tm.model, enc[sl], dec[sl]).positions
        return self.tm.positions_to_metres(out)
