"""Metrics and the Leave-One-User-Out (LOUO) cross-validation harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import (
    POSITION_COLUMNS,
    Dataset,
    Frame,
    PreparedTrial,
    Standardizer,
    Task,
    WindowSpec,
    make_frames,
    reassemble_labels,
    select_arm,
    stack_frames,
)
from .errors import ConfigError, ContractError, ShapeError
from .inference import (
    TrainedModel,
    batched,
    predict_gestures,
    predict_trajectory,
    recognize_batch,
    start_vector,
    window_seed,
)
from .seeds import derive_seed
from .training import TrainConfig, train
from .transformer import ModelConfig, TransformerModel

log = logging.getLogger(__name__)

MM_PER_M = 1000.0
TRAJECTORY_COLUMNS = ("x1", "y1", "z1", "d1", "x2", "y2", "z2", "d2")


def frame_accuracy(pred, true) -> float:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError(f"label sequences differ in length: {pred.shape} vs {true.shape}")
    return float(np.mean(pred == true))


def dataset_accuracy(pred_frames, true_frames) -> float:
    """Unweighted mean over frames of the per-frame accuracy."""
    accs = [frame_accuracy(p, t) for p, t in zip(pred_frames, true_frames)]
    if not accs:
        raise ContractError("accuracy over an empty frame set")
    return float(np.mean(accs))


def _residuals(y, y_hat) -> np.ndarray:
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"series differ in shape: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ContractError("metric over an empty series")
    return y - y_hat


def rmse(y, y_hat) -> float:
    r = _residuals(y, y_hat)
    return float(np.sqrt(np.mean(r * r)))


def mae(y, y_hat) -> float:
    return float(np.mean(np.abs(_residuals(y, y_hat))))


def to_mm(metres):
    return np.asarray(metres) * MM_PER_M


def to_metres(mm):
    return np.asarray(mm) / MM_PER_M


def trajectory_columns(true_xyz: np.ndarray, pred_xyz: np.ndarray):
    """Split ``[N, 6]`` positions into the eight series x1 y1 z1 d1 x2 y2 z2 d2."""
    out_t, out_p = {}, {}
    for arm in (0, 1):
        t = true_xyz[:, 3 * arm:3 * arm + 3]
        p = pred_xyz[:, 3 * arm:3 * arm + 3]
        for i, axis in enumerate("xyz"):
            out_t[f"{axis}{arm + 1}"] = t[:, i]
            out_p[f"{axis}{arm + 1}"] = p[:, i]
        out_t[f"d{arm + 1}"] = np.linalg.norm(t, axis=1)
        out_p[f"d{arm + 1}"] = np.linalg.norm(p, axis=1)
    return out_t, out_p


def trajectory_metrics(true_mm: np.ndarray, pred_mm: np.ndarray) -> dict:
    """RMSE and MAE per axis and per distance-from-origin for both arms."""
    t, p = trajectory_columns(true_mm, pred_mm)
    return {
        "RMSE": {c: rmse(t[c], p[c]) for c in TRAJECTORY_COLUMNS},
        "MAE": {c: mae(t[c], p[c]) for c in TRAJECTORY_COLUMNS},
    }


# ------------------------------------------------------------- evaluation

@dataclass
class FrameEvaluation:
    metrics: dict
    labels: np.ndarray | None = None  # [B, T] predicted labels (gesture tasks)
    positions_mm: np.ndarray | None = None  # [B, T_pred, 6]
    per_step: dict | None = None


def evaluate_frames(tm: TrainedModel, frames: list[Frame], seed: int = 0) -> FrameEvaluation:
    """Score ``tm`` on ``frames`` (already standardised with ``tm.standardizer``)."""
    if not frames:
        raise ContractError("no frames to evaluate")
    task = tm.task
    if task is Task.RECOGNITION:
        labels = np.empty((len(frames), tm.t_obs), dtype=np.int64)
        for sl in batched(len(frames)):
            chunk = frames[sl]
            enc = np.stack([f.enc_in for f in chunk])
            starts = np.stack([start_vector(window_seed(seed, f.source.trial.trial_id, f.t)) for f in chunk])
            labels[sl] = recognize_batch(tm.model, enc, starts).labels
        truth = np.stack([f.target_labels for f in frames])
        return FrameEvaluation({"accuracy": dataset_accuracy(labels, truth)}, labels=labels)
    if task is Task.GESTURE_PREDICTION:
        labels = np.empty((len(frames), tm.t_pred), dtype=np.int64)
        for sl in batched(len(frames)):
            enc, dec, _ = stack_frames(frames[sl])
            labels[sl] = predict_gestures(tm.model, enc, dec).labels
        truth = np.stack([f.target_labels for f in frames])
        return FrameEvaluation({"accuracy": dataset_accuracy(labels, truth)}, labels=labels)

    pred = np.empty((len(frames), tm.t_pred, len(POSITION_COLUMNS)))
    true = np.empty_like(pred)
    last_obs = np.empty((len(frames), len(POSITION_COLUMNS)))
    for sl in batched(len(frames)):
        enc, dec, tgt = stack_frames(frames[sl])
        pred[sl] = predict_trajectory(tm.model, enc, dec).positions
        true[sl] = tgt
        last_obs[sl] = np.stack([f.source.positions[f.t + tm.t_obs - 1] for f in frames[sl]])
    pred_mm = to_mm(tm.positions_to_metres(pred))
    true_mm = to_mm(tm.positions_to_metres(true))
    last_mm = to_mm(tm.positions_to_metres(last_obs))
    metrics = trajectory_metrics(true_mm[:, -1], pred_mm[:, -1])
    disp = true_mm[:, -1] - last_mm
    metrics["displacement"] = {
        "arm1": float(np.linalg.norm(disp[:, :3], axis=1).mean()),
        "arm2": float(np.linalg.norm(disp[:, 3:], axis=1).mean()),
    }
    per_step = {
        "MAE_d1": [mae(*(np.linalg.norm(a[:, k, :3], axis=1) for a in (true_mm, pred_mm))) for k in range(tm.t_pred)],
        "MAE_d2": [mae(*(np.linalg.norm(a[:, k, 3:], axis=1) for a in (true_mm, pred_mm))) for k in range(tm.t_pred)],
    }
    return FrameEvaluation(metrics, positions_mm=pred_mm, per_step=per_step)


# -------------------------------------------------------------- the report

@dataclass
class FoldResult:
    subject: str
    n_train_frames: int
    n_test_frames: int
    metrics: dict
    per_step: dict | None = None
    timeline: tuple | None = None  # (trial_id, predicted[L], truth[L])
    loss_curve: list | None = None


def _flatten(metrics: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in metrics.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = float(v)
    return out


@dataclass
class EvalReport:
    task: Task
    folds: list[FoldResult] = field(default_factory=list)

    def aggregate(self) -> dict:
        """Arithmetic mean of each metric over folds (subjects, not frames)."""
        if not self.folds:
            return {}
        flat = [_flatten(f.metrics) for f in self.folds]
        return {k: float(np.mean([d[k] for d in flat])) for k in flat[0]}

    def _rows(self):
        rows = [(f.subject, _flatten(f.metrics), f.n_test_frames) for f in self.folds]
        rows.append(("mean", self.aggregate(), sum(f.n_test_frames for f in self.folds)))
        return rows

    def to_tsv(self) -> str:
        """Machine-readable table.  Trajectory rows follow x1 y1 z1 d1 x2 y2 z2 d2 (mm)."""
        if self.task is Task.TRAJECTORY_PREDICTION:
            lines = ["subject\tmetric\t" + "\t".join(TRAJECTORY_COLUMNS) + "\tn_frames"]
            for subject, m, n in self._rows():
                for metric in ("RMSE", "MAE"):
                    vals = "\t".join(f"{m[f'{metric}.{c}']:.6f}" for c in TRAJECTORY_COLUMNS)
                    lines.append(f"{subject}\t{metric}\t{vals}\t{n}")
        else:
            lines = ["subject\taccuracy\tn_frames"]
            lines += [f"{s}\t{m['accuracy']:.6f}\t{n}" for s, m, n in self._rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        title = f"LOUO report: {self.task.value} ({len(self.folds)} folds)"
        if self.task is Task.TRAJECTORY_PREDICTION:
            head = f"{'subject':<8}{'metric':<7}" + "".join(f"{c:>9}" for c in TRAJECTORY_COLUMNS)
            lines = [title, "final prediction step, millimetres", head, "-" * len(head)]
            for subject, m, _ in self._rows():
                for metric in ("RMSE", "MAE"):
                    lines.append(f"{subject:<8}{metric:<7}" + "".join(f"{m[f'{metric}.{c}']:>9.3f}" for c in TRAJECTORY_COLUMNS))
        else:
            head = f"{'subject':<10}{'accuracy':>10}{'frames':>10}"
            lines = [title, head, "-" * len(head)]
            lines += [f"{s:<10}{100 * m['accuracy']:>9.2f}%{n:>10}" for s, m, n in self._rows()]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- LOUO

def fit_standardizer(trials, arm: str) -> Standardizer:
    return Standardizer.fit(select_arm(t.kinematics, arm) for t in trials)


def assert_no_leakage(train_frames, test_frames) -> None:
    train_subjects = {f.subject_id for f in train_frames}
    test_subjects = {f.subject_id for f in test_frames}
    overlap = train_subjects & test_subjects
    if overlap:
        raise ContractError(f"subjects {sorted(overlap)} appear in both training and test frames")


def build_frames(trials, window: WindowSpec, arm: str, standardizer: Standardizer, stride: int | None = None):
    spec = window if stride is None else replace(window, stride=stride)
    frames = []
    for t in trials:
        frames.extend(make_frames(PreparedTrial(t, arm, standardizer), spec))
    return frames


def train_model(trials, window: WindowSpec, arm: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                rate_hz: int, progress=None):
    """Fit standardisation and a fresh model on ``trials``.  Returns (TrainedModel, history, frames)."""
    std = fit_standardizer(trials, arm)
    frames = build_frames(trials, window, arm, std)
    if not frames:
        raise ContractError("training trials are too short for the window")
    model = TransformerModel(model_cfg)
    model, history = train(model, frames, train_cfg, progress)
    tm = TrainedModel(model, window.task, arm, rate_hz, window.t_obs, window.t_pred, std)
    return tm, history, frames


def louo(dataset: Dataset, window: WindowSpec, model_cfg: ModelConfig, train_cfg: TrainConfig,
         arm: str = "PSM", seed: int = 0, eval_stride: int = 1, subjects=None, progress=None,
         seed_log: dict | None = None) -> EvalReport:
    """Hold each subject out once, train on the rest, score on the held-out trials."""
    if train_cfg.task is not window.task:
        raise ConfigError(f"train config task {train_cfg.task.value} != window task {window.task.value}")
    groups = dataset.by_subject()
    wanted = subjects if subjects is not None else list(groups)
    active = []
    for s in wanted:
        if not groups.get(s):
            log.warning("subject %s has no trials; skipped", s)
            continue
        active.append(s)
    if len(active) < 2:
        raise ConfigError(f"LOUO needs at least two subjects with trials, got {len(active)}")
    report = EvalReport(window.task)
    for subject in active:
        train_trials = [t for s in active if s != subject for t in groups[s]]
        test_trials = groups[subject]
        fold_model_seed = derive_seed(seed, "louo", subject, "model")
        fold_train_seed = derive_seed(seed, "louo", subject, "train")
        fold_eval_seed = derive_seed(seed, "louo", subject, "eval")
        if seed_log is not None:
            seed_log[subject] = {"model": fold_model_seed, "train": fold_train_seed, "eval": fold_eval_seed}
        fold_progress = None if progress is None else (lambda e, l, s=subject: progress(s, e, l))
        tm, history, train_frames = train_model(
            train_trials, window, arm, replace(model_cfg, seed=fold_model_seed),
            replace(train_cfg, seed=fold_train_seed), dataset.rate_hz, fold_progress,
        )
        test_frames = build_frames(test_trials, window, arm, tm.standardizer, eval_stride)
        assert_no_leakage(train_frames, test_frames)
        if not test_frames:
            log.warning("subject %s: trials too short for the window; skipped", subject)
            continue
        ev = evaluate_frames(tm, test_frames, fold_eval_seed)
        timeline = None
        if ev.labels is not None:
            first = test_frames[0].source
            own = [i for i, f in enumerate(test_frames) if f.source is first]
            offset = 0 if window.task is Task.RECOGNITION else window.t_obs
            pred = reassemble_labels(ev.labels[own], [test_frames[i].t + offset for i in own], len(first))
            timeline = (first.trial.trial_id, pred, first.trial.gestures.copy())
        report.folds.append(FoldResult(
            subject, len(train_frames), len(test_frames), ev.metrics, ev.per_step, timeline,
            [row[2] for row in history.steps],
        ))
    return report
