"""Desk-scale LOUO runs on synthetic data, shared by scripts/ and the
acceptance suite.

Each recipe fixes the generator preset, sampling rate, window, stride and
epoch budget.  Epoch budgets stay within the 15-epoch envelope; strides trade
frames per epoch for wall-clock time on one CPU core.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .dataio import Dataset, Task, WindowSpec
from .evaluation import EvalReport, louo
from .synthgen import SynthConfig, generate_dataset, prediction_preset, recognition_preset
from .training import TrainConfig
from .transformer import GESTURE_PREDICTION_CONFIG, RECOGNITION_CONFIG, TRAJECTORY_CONFIG, ModelConfig


@dataclass
class Recipe:
    task: Task
    synth: SynthConfig
    rate_hz: int
    window: WindowSpec
    model: ModelConfig
    train: TrainConfig
    eval_stride: int = 1

    def dataset(self) -> Dataset:
        ds = generate_dataset(self.synth)
        return ds.downsampled(ds.rate_hz // self.rate_hz)


def recipe(task, seed: int = 0) -> Recipe:
    task = Task.parse(task)
    if task is Task.RECOGNITION:
        return Recipe(task, recognition_preset(seed=seed), 30, WindowSpec(task, 30, stride=3),
                      RECOGNITION_CONFIG, TrainConfig(task=task, epochs=4, seed=seed))
    synth = prediction_preset(seed=seed)
    if task is Task.GESTURE_PREDICTION:
        return Recipe(task, synth, 10, WindowSpec(task, 10, 10), GESTURE_PREDICTION_CONFIG,
                      TrainConfig(task=task, epochs=8, seed=seed))
    return Recipe(task, synth, 10, WindowSpec(task, 10, 10), TRAJECTORY_CONFIG,
                  TrainConfig(task=task, epochs=10, seed=seed))


def run(r: Recipe, seed: int = 0, progress=None) -> EvalReport:
    return louo(r.dataset(), r.window, replace(r.model, seed=seed), r.train, seed=seed,
                eval_stride=r.eval_stride, progress=progress)


def trajectory_ratios(report: EvalReport) -> dict:
    """Aggregate final-step distance MAE over mean per-window displacement, per arm."""
    agg = report.aggregate()
    return {arm: agg[f"MAE.d{arm}"] / agg[f"displacement.arm{arm}"] for arm in (1, 2)}
