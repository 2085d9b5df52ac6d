import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from surgformer.dataio import Task, WindowSpec
from surgformer.errors import ConfigError, ContractError, ShapeError
from surgformer.evaluation import (
    TRAJECTORY_COLUMNS,
    EvalReport,
    FoldResult,
    assert_no_leakage,
    build_frames,
    dataset_accuracy,
    evaluate_frames,
    fit_standardizer,
    frame_accuracy,
    louo,
    mae,
    rmse,
    to_metres,
    to_mm,
    trajectory_metrics,
)
from surgformer.inference import TrainedModel
from surgformer.synthgen import SynthConfig, generate_dataset
from surgformer.training import TrainConfig
from surgformer.transformer import (
    GESTURE_PREDICTION_CONFIG,
    RECOGNITION_CONFIG,
    TRAJECTORY_CONFIG,
    TransformerModel,
)

from conftest import random_trial


# ------------------------------------------------------------------ metrics

def test_accuracy_counting():
    true = np.arange(30) % 16
    pred = true.copy()
    pred[:3] = (pred[:3] + 1) % 16
    assert frame_accuracy(pred, true) == pytest.approx(0.9, abs=1e-12)
    assert frame_accuracy(true, true) == 1.0


def test_dataset_accuracy_is_mean_over_frames():
    frames_true = [np.array([1, 1]), np.array([2, 2])]
    frames_pred = [np.array([1, 0]), np.array([2, 2])]
    assert abs(dataset_accuracy(frames_pred, frames_true) - 0.75) < 1e-12


def test_accuracy_length_mismatch():
    with pytest.raises(ShapeError):
        frame_accuracy([1, 2], [1, 2, 3])


def test_error_metrics_hand_values():
    y, y_hat = np.array([0.0, 0.0]), np.array([-3.0, 4.0])
    assert abs(mae(y, y_hat) - 3.5) < 1e-12
    assert abs(rmse(y, y_hat) - math.sqrt(12.5)) < 1e-12
    assert rmse(y, y) == mae(y, y) == 0.0


@given(st.floats(-1e3, 1e3), st.integers(1, 50))
def test_equal_residuals_give_equal_rmse_and_mae(r, n):
    y = np.zeros(n)
    assert rmse(y, y + r) == pytest.approx(mae(y, y + r), rel=1e-12, abs=1e-12)


def test_empty_series_rejected():
    with pytest.raises(ContractError):
        mae([], [])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_millimetre_round_trip(values):
    m = np.array(values)
    # two roundings: exact up to a couple of ulps, not to a fixed absolute bound
    np.testing.assert_allclose(to_metres(to_mm(m)), m, rtol=4.5e-16, atol=0)
    assert np.allclose(to_mm(m), m * 1000.0)


def test_trajectory_metrics_columns():
    true = np.zeros((2, 6))
    pred = np.array([[3.0, 4.0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0]])
    m = trajectory_metrics(true, pred)
    assert list(m["MAE"]) == list(TRAJECTORY_COLUMNS)
    assert m["MAE"]["d1"] == pytest.approx(2.5) and m["MAE"]["x1"] == pytest.approx(1.5)
    assert m["RMSE"]["d2"] == 0.0


# ------------------------------------------------------ frame evaluation

def _tm(task, cfg, t_obs, t_pred, trials):
    std = fit_standardizer(trials, "PSM")
    return TrainedModel(TransformerModel(cfg), task, "PSM", 10, t_obs, t_pred, std), std


@pytest.mark.parametrize("task, cfg, t_pred", [
    (Task.RECOGNITION, RECOGNITION_CONFIG, 0),
    (Task.GESTURE_PREDICTION, GESTURE_PREDICTION_CONFIG, 10),
    (Task.TRAJECTORY_PREDICTION, TRAJECTORY_CONFIG, 10),
])
def test_metrics_are_permutation_invariant(task, cfg, t_pred):
    trials = [random_trial(40, seed=1), random_trial(40, subject="C", seed=2)]
    tm, std = _tm(task, cfg, 10, t_pred, trials)
    frames = build_frames(trials, WindowSpec(task, 10, t_pred), "PSM", std)
    base = evaluate_frames(tm, frames, seed=4).metrics
    order = np.random.default_rng(0).permutation(len(frames))
    shuffled = evaluate_frames(tm, [frames[i] for i in order], seed=4).metrics
    flat = lambda m: {f"{k}.{kk}": vv for k, v in m.items() for kk, vv in (v.items() if isinstance(v, dict) else [("", v)])}  # noqa: E731
    a, b = flat(base), flat(shuffled)
    assert a.keys() == b.keys()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-12), k


def test_trajectory_evaluation_reports_displacement_and_per_step():
    trials = [random_trial(40, seed=3)]
    tm, std = _tm(Task.TRAJECTORY_PREDICTION, TRAJECTORY_CONFIG, 10, 10, trials)
    ev = evaluate_frames(tm, build_frames(trials, WindowSpec(Task.TRAJECTORY_PREDICTION, 10, 10), "PSM", std))
    assert set(ev.metrics) == {"RMSE", "MAE", "displacement"}
    assert len(ev.per_step["MAE_d1"]) == 10
    assert ev.per_step["MAE_d1"][-1] == pytest.approx(ev.metrics["MAE"]["d1"], rel=1e-12)
    assert ev.positions_mm.shape == (21, 10, 6)


# --------------------------------------------------------------------- LOUO

def tiny_dataset(n_subjects, length=200):
    cfg = SynthConfig(n_subjects=n_subjects, trials_per_subject=1, length=length, n_classes=4, dwell=(10, 20))
    return generate_dataset(cfg).downsampled(3)


def test_leakage_check_raises_on_shared_subject():
    window = WindowSpec(Task.RECOGNITION, 10)
    std = fit_standardizer([random_trial(20)], "PSM")
    a = build_frames([random_trial(20, subject="B")], window, "PSM", std)
    b = build_frames([random_trial(20, subject="B", trial_id="Suturing_B002")], window, "PSM", std)
    with pytest.raises(ContractError):
        assert_no_leakage(a, b)


def test_louo_three_subjects():
    ds = tiny_dataset(3)
    seeds = {}
    report = louo(ds, WindowSpec(Task.RECOGNITION, 10, stride=5), RECOGNITION_CONFIG,
                  TrainConfig(task="recognition", epochs=1), seed=0, seed_log=seeds)
    assert [f.subject for f in report.folds] == ["B", "C", "D"]
    assert set(seeds) == {"B", "C", "D"} and len({s["model"] for s in seeds.values()}) == 3
    agg = report.aggregate()
    assert abs(agg["accuracy"] - np.mean([f.metrics["accuracy"] for f in report.folds])) < 1e-12
    rows = report.to_tsv().strip().splitlines()
    assert len(rows) == 1 + 3 + 1 and rows[-1].startswith("mean\t")
    for f in report.folds:
        assert f.n_test_frames > 0 and f.timeline is not None


def test_louo_eight_subjects_eight_folds():
    ds = tiny_dataset(8, length=120)
    report = louo(ds, WindowSpec(Task.RECOGNITION, 10, stride=10), RECOGNITION_CONFIG,
                  TrainConfig(task="recognition", epochs=1))
    assert len(report.folds) == 8


def test_louo_needs_two_subjects():
    with pytest.raises(ConfigError):
        louo(tiny_dataset(1), WindowSpec(Task.RECOGNITION, 10), RECOGNITION_CONFIG,
             TrainConfig(task="recognition", epochs=1))


def test_louo_task_mismatch():
    with pytest.raises(ConfigError):
        louo(tiny_dataset(2), WindowSpec(Task.RECOGNITION, 10), RECOGNITION_CONFIG,
             TrainConfig(task="gesture_prediction", epochs=1))


def test_trajectory_report_layout():
    m = {"RMSE": {c: 1.0 for c in TRAJECTORY_COLUMNS}, "MAE": {c: 2.0 for c in TRAJECTORY_COLUMNS},
         "displacement": {"arm1": 3.0, "arm2": 4.0}}
    m2 = {"RMSE": {c: 3.0 for c in TRAJECTORY_COLUMNS}, "MAE": {c: 4.0 for c in TRAJECTORY_COLUMNS},
          "displacement": {"arm1": 5.0, "arm2": 6.0}}
    report = EvalReport(Task.TRAJECTORY_PREDICTION, [FoldResult("B", 1, 1, m), FoldResult("C", 1, 1, m2)])
    head = report.to_tsv().splitlines()[0].split("\t")
    assert head == ["subject", "metric", "x1", "y1", "z1", "d1", "x2", "y2", "z2", "d2", "n_frames"]
    assert report.aggregate()["MAE.d1"] == 3.0 and report.aggregate()["displacement.arm2"] == 5.0
    assert "x1" in report.to_text()
