from dataclasses import replace

import numpy as np
import pytest

from surgformer.dataio import Task, TrialRecord, WindowSpec, one_hot
from surgformer.errors import ConfigError, ShapeError
from surgformer.evaluation import build_frames, evaluate_frames, train_model
from surgformer.inference import (
    ChainResult,
    chain,
    predict_gestures,
    predict_trajectory,
    recognize,
    recognize_batch,
    start_vector,
    window_seed,
)
from surgformer.training import TrainConfig
from surgformer.transformer import (
    GESTURE_PREDICTION_CONFIG,
    RECOGNITION_CONFIG,
    TRAJECTORY_CONFIG,
    TransformerModel,
)

PSM_XYZ = [38, 39, 40, 57, 58, 59]
PSM_VEL = [50, 51, 52, 69, 70, 71]


@pytest.fixture(scope="module")
def rec_model():
    return TransformerModel(RECOGNITION_CONFIG)


def test_recognition_emits_one_label_per_sample(rec_model):
    res = recognize(rec_model, np.random.default_rng(0).normal(size=(30, 38)), seed=1)
    assert res.labels.shape == (30,) and res.probabilities.shape == (30, 16)
    assert np.allclose(res.probabilities.sum(axis=1), 1.0)


def test_recognition_is_deterministic_for_a_seed(rec_model):
    x = np.random.default_rng(1).normal(size=(30, 38))
    a, b = recognize(rec_model, x, seed=5), recognize(rec_model, x, seed=5)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.probabilities, b.probabilities)


def test_start_vector_is_uniform_unit_cube():
    r = start_vector(window_seed(0, "Suturing_B001", 12))
    assert r.shape == (16,) and (r >= 0).all() and (r < 1).all()
    assert np.array_equal(r, start_vector(window_seed(0, "Suturing_B001", 12)))
    assert not np.array_equal(r, start_vector(window_seed(0, "Suturing_B001", 13)))


def test_recurrent_decoding_is_prefix_stable(rec_model):
    x = np.random.default_rng(2).normal(size=(4, 30, 38))
    starts = np.random.default_rng(3).random((4, 16))
    res, trace = recognize_batch(rec_model, x, starts, return_trace=True)
    assert len(trace) == 30
    for j, rows in enumerate(trace, start=1):
        assert np.array_equal(rows[:, :j], res.labels[:, :j])


def test_recognition_rejects_wrong_model():
    with pytest.raises(ConfigError):
        recognize(TransformerModel(TRAJECTORY_CONFIG), np.zeros((30, 38)), seed=0)
    with pytest.raises(ShapeError):
        recognize(TransformerModel(RECOGNITION_CONFIG), np.zeros((30, 37)), seed=0)


def test_zero_kinematics_to_class_zero():
    trial = TrialRecord("B", "zeros", 30, np.zeros((90, 76)), np.zeros(90, dtype=int))
    window = WindowSpec(Task.RECOGNITION, 30, stride=5)
    cfg = TrainConfig(task="recognition", epochs=30, batch_size=13, warmup_steps=50, shift_row="random")
    tm, _, _ = train_model([trial], window, "PSM", RECOGNITION_CONFIG, cfg, 30)
    for seed in range(5):
        assert (recognize(tm.model, np.zeros((30, 38)), seed).labels == 0).all()


def test_gesture_prediction_outputs():
    model = TransformerModel(GESTURE_PREDICTION_CONFIG)
    rng = np.random.default_rng(4)
    res = predict_gestures(model, rng.normal(size=(10, 38)), one_hot(rng.integers(0, 16, 10)))
    assert res.labels.shape == (10,)
    assert np.allclose(res.probabilities.sum(axis=-1), 1.0, atol=1e-12)


def test_single_shot_prediction_is_feed_forward():
    model = TransformerModel(GESTURE_PREDICTION_CONFIG)
    rng = np.random.default_rng(5)
    enc, dec = rng.normal(size=(10, 38)), one_hot(rng.integers(0, 16, 10))
    first = predict_gestures(model, enc, dec)
    again = predict_gestures(model, enc, dec)
    assert np.array_equal(first.probabilities, again.probabilities)
    # feeding its own output back in changes nothing: there is no recurrence
    dec2 = dec.copy()
    dec2[6:] = one_hot(first.labels[6:])
    assert np.array_equal(predict_gestures(model, enc, dec2).probabilities[:6], first.probabilities[:6])


def test_trajectory_outputs_are_deterministic():
    model = TransformerModel(TRAJECTORY_CONFIG)
    rng = np.random.default_rng(6)
    enc, dec = rng.normal(size=(10, 54)), rng.normal(size=(10, 22))
    out = predict_trajectory(model, enc, dec).positions
    assert out.shape == (10, 6)
    assert np.array_equal(out, predict_trajectory(model, enc, dec).positions)


def constant_velocity_trial(i, length=30, rate=10):
    rng = np.random.default_rng(i)
    v = np.array([0.02, -0.01, 0.015, -0.015, 0.02, 0.01])
    t = np.arange(length) / rate
    kin = np.zeros((length, 76))
    kin[:, PSM_XYZ] = np.array([0.05, 0.02, -0.1] * 2) + rng.normal(scale=0.01, size=6) + t[:, None] * v
    kin[:, PSM_VEL] = v
    return TrialRecord("B", f"cv{i:03d}", rate, kin, np.zeros(length, dtype=int))


def test_constant_velocity_is_extrapolated():
    trials = [constant_velocity_trial(i) for i in range(70)]
    window = WindowSpec(Task.TRAJECTORY_PREDICTION, 10, 10)
    # capacity check, so no dropout
    model_cfg = replace(TRAJECTORY_CONFIG, dropout_p=0.0)
    cfg = TrainConfig(task="trajectory_prediction", epochs=40, batch_size=32, warmup_steps=200)
    tm, _, _ = train_model(trials[:60], window, "PSM", model_cfg, cfg, 10)
    ev = evaluate_frames(tm, build_frames(trials[60:], window, "PSM", tm.standardizer))
    for arm in (1, 2):
        assert ev.metrics["MAE"][f"d{arm}"] < 0.1 * ev.metrics["displacement"][f"arm{arm}"]


# -------------------------------------------------------------------- chain

class Oracle:
    """Mock stage that looks answers up from ground truth keyed by window start."""

    def __init__(self, truth, rate_hz=10, t_obs=10, t_pred=10, noise=None):
        self.truth, self.rate_hz, self.t_obs, self.t_pred, self.noise = truth, rate_hz, t_obs, t_pred, noise
        self.calls = []

    def recognize(self, raw_windows, seeds):
        self.calls.append(seeds)
        out = self.truth[[s[1] for s in seeds]].copy()
        if self.noise is not None:
            out[self.noise] = (out[self.noise] + 1) % 16
        return out

    def predict(self, raw_windows, current_labels, *rest):
        self.calls.append(current_labels)
        if rest:  # trajectory: current positions shifted by a label-dependent offset
            positions, future = rest
            return positions + 1e-3 * future[..., None]
        return (current_labels + 1) % 16


def test_chain_with_oracle_stages_equals_unchained():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 16, size=(6, 10))
    rec, pred, traj = Oracle(labels), Oracle(None), Oracle(None)
    raw, pos = rng.normal(size=(6, 10, 76)), rng.normal(size=(6, 10, 6))
    res = chain(rec, pred, traj, raw, pos, seed=3)
    assert isinstance(res, ChainResult)
    future = pred.predict(raw, labels)
    assert np.array_equal(res.current_labels, labels)
    assert np.array_equal(res.future_labels, future)
    assert np.array_equal(res.positions, traj.predict(raw, labels, pos, future))


def test_chained_accuracy_not_above_oracle_input():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 16, size=(20, 10))
    noise = rng.random((20, 10)) < 0.2
    pred, traj = Oracle(None), Oracle(None)
    res = chain(Oracle(labels, noise=noise), pred, traj, np.zeros((20, 10, 76)), np.zeros((20, 10, 6)))
    truth_future = (labels + 1) % 16
    chained = (res.future_labels == truth_future).mean()
    oracle = (pred.predict(None, labels) == truth_future).mean()
    assert chained <= oracle


def test_chain_rejects_rate_mismatch():
    rec = Oracle(np.zeros((1, 30), dtype=int), rate_hz=30, t_obs=30)
    with pytest.raises(ConfigError, match="rate"):
        chain(rec, Oracle(None), Oracle(None), np.zeros((1, 30, 76)), np.zeros((1, 10, 6)))


def test_chain_rejects_window_mismatch():
    with pytest.raises(ConfigError):
        chain(Oracle(None), Oracle(None, t_obs=20, t_pred=20), Oracle(None),
              np.zeros((1, 10, 76)), np.zeros((1, 10, 6)))
