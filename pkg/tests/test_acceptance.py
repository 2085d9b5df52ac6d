"""Acceptance criteria, one test per criterion.  Every test prints a single
PASS/FAIL line with the measured value and its threshold.

The three desk-scale runs train full LOUO experiments and take a few minutes
each on one CPU core.  The JIGSAWS reproduction runs only when
SURGFORMER_JIGSAWS points at the suturing data.
"""

import json
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from surgformer import evaluation, experiments
from surgformer.cli import main
from surgformer.dataio import Task, WindowSpec, load_dataset
from surgformer.evaluation import dataset_accuracy, frame_accuracy, louo, mae, rmse
from surgformer.numerics import Tensor, no_grad
from surgformer.numerics.gradcheck import check_gradients, relative_error
from surgformer.synthgen import SynthConfig, generate_dataset
from surgformer.training import TrainConfig, gesture_loss, lr_schedule, trajectory_loss
from surgformer.transformer import (
    GESTURE_PREDICTION_CONFIG,
    RECOGNITION_CONFIG,
    TRAJECTORY_CONFIG,
    ModelConfig,
    MultiHeadAttention,
    TransformerModel,
    look_ahead_mask,
    parameter_count,
)

from test_transformer import _modules, dense_attention_oracle


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return emit


# ------------------------------------------------------------ gradient check

def _toy(wiring, seed):
    """Toy model (d_model=8, T=4) and loss closure for one task wiring."""
    rng = np.random.default_rng(seed)
    T, d = 4, 8
    base = dict(n_layers=1, d_enc=d, d_dec=d, d_ff=16, dropout_p=0.0, seed=seed)
    enc = rng.normal(size=(T, d))
    if wiring == "recognition":
        cfg = ModelConfig(heads_enc=1, heads_dec=1, d_out=d, **base)
        target = np.eye(d)[rng.integers(0, d, T)]
        dec = np.vstack([np.zeros(d), target[:-1]])  # shifted right
        loss = lambda m: gesture_loss(m(enc, dec), Tensor(target))  # noqa: E731
    elif wiring == "gesture_prediction":
        cfg = ModelConfig(heads_enc=1, heads_dec=2, d_out=d, **base)
        dec = np.eye(d)[rng.integers(0, d, T)]
        target = np.eye(d)[rng.integers(0, d, T)]
        loss = lambda m: gesture_loss(m(enc, dec), Tensor(target))  # noqa: E731
    else:
        cfg = ModelConfig(heads_enc=2, heads_dec=2, d_out=6, **base)
        dec = np.hstack([rng.normal(size=(T, 6)), np.eye(2)[rng.integers(0, 2, T)]])
        target = rng.normal(size=(T, 6))
        loss = lambda m: trajectory_loss(m(enc, dec), Tensor(target))  # noqa: E731
    model = TransformerModel(cfg)
    for p in model.parameters():  # move gains and biases off their initial values
        p.data += rng.normal(scale=0.1, size=p.shape)
    return model, loss


def test_gradient_correctness(verdict):
    t0 = time.time()
    worst = 1.0
    for wiring in ("recognition", "gesture_prediction", "trajectory_prediction"):
        for seed in range(5):
            model, loss = _toy(wiring, seed)
            analytic, numeric = check_gradients(lambda: loss(model), model.parameters(), h=1e-5)
            # gradients below 1e-6 in magnitude are compared on an absolute 1e-10 scale
            frac = float((relative_error(analytic, numeric, floor=1e-6) < 1e-4).mean())
            worst = min(worst, frac)
    elapsed = time.time() - t0
    verdict("gradient correctness", worst >= 0.99 and elapsed < 60,
            f"worst fraction within 1e-4 = {worst:.4f} (>= 0.99), {elapsed:.1f} s (< 60 s)")


# ---------------------------------------------------------- attention oracle

def test_attention_oracle(verdict):
    rng = np.random.default_rng(0)
    worst = 0.0
    for seed in range(5):
        mha = MultiHeadAttention(8, 1, np.random.default_rng(seed))
        q, k, v = (rng.normal(size=(4, 8)) for _ in range(3))
        for mask in (None, look_ahead_mask(4)):
            out = mha(Tensor(q), Tensor(k), Tensor(v), mask).data
            worst = max(worst, float(np.abs(out - dense_attention_oracle(mha, q, k, v, mask)).max()))
    model = TransformerModel(RECOGNITION_CONFIG)
    causal_ok, T = 0, 10
    with no_grad():
        for _ in range(100):
            enc, dec = rng.normal(size=(T, 38)), rng.normal(size=(T, 16))
            j = int(rng.integers(0, T - 1))
            dec2 = dec.copy()
            dec2[j + 1:] = rng.normal(size=(T - j - 1, 16))
            diff = np.abs(model(enc, dec).data[:j + 1] - model(enc, dec2).data[:j + 1]).max()
            causal_ok += diff <= 1e-12
    verdict("attention oracle", worst < 1e-10 and causal_ok == 100,
            f"max |MHA - dense| = {worst:.2e} (< 1e-10); causal perturbation {causal_ok}/100")


# -------------------------------------------------------------- architecture

def test_architecture_conformance(verdict):
    expected = [
        (RECOGNITION_CONFIG, (38, 16, 16), (1, 1, 1), 23118),
        (GESTURE_PREDICTION_CONFIG, (38, 16, 16), (4, 1, 4), 89784),
        (TRAJECTORY_CONFIG, (54, 22, 6), (1, 6, 11), 45204),
    ]
    problems = []
    rng = np.random.default_rng(1)
    for cfg, dims, layout, n_params in expected:
        if (cfg.d_enc, cfg.d_dec, cfg.d_out) != dims or (cfg.n_layers, cfg.heads_enc, cfg.heads_dec) != layout:
            problems.append(f"config {layout}")
        model = TransformerModel(cfg)
        if model.num_parameters() != n_params or parameter_count(cfg) != n_params:
            problems.append(f"parameter count {layout}")
        out = model(rng.normal(size=(10, cfg.d_enc)), rng.normal(size=(10, cfg.d_dec)))
        if out.shape != (10, cfg.d_out):
            problems.append(f"output shape {layout}")
        kinds = {type(m).__name__ for m in _modules(model)}
        if kinds - {"TransformerModel", "EncoderLayer", "DecoderLayer", "MultiHeadAttention",
                    "FeedForward", "Linear", "LayerNorm"}:
            problems.append(f"unexpected components {kinds}")
        if any("embed" in n for n, _ in model.named_parameters()):
            problems.append("embedding parameters")
    for bad in (dict(d_enc=54, d_dec=22, d_out=6, heads_dec=7), dict(heads_enc=4)):
        try:
            ModelConfig(**bad)
            problems.append(f"accepted {bad}")
        except ValueError:
            pass
    verdict("architecture conformance", not problems,
            "three reference configs, dims, parameter counts, no embedding/padding mask"
            + (f"; problems: {problems}" if problems else ""))


# ---------------------------------------------------------------- schedule

def test_lr_schedule(verdict):
    lr = lr_schedule(2000, 16, 2000)
    peak = int(np.argmax([lr_schedule(s, 16, 2000) for s in range(1, 10001)])) + 1
    verdict("LR schedule", abs(lr - 5.5902e-3) < 1e-7 and peak == 2000,
            f"lr(2000; 16) = {lr:.7e} (5.5902e-3 +- 1e-7); peak at step {peak} (2000)")


# ----------------------------------------------------------------- metrics

def test_metric_correctness(verdict):
    true = np.arange(30) % 16
    pred = true.copy()
    pred[:3] += 1
    checks = {
        "27/30": abs(frame_accuracy(pred, true) - 0.9),
        "all correct": abs(frame_accuracy(true, true) - 1.0),
        "dataset mean": abs(dataset_accuracy([[1, 0], [2, 2]], [[1, 1], [2, 2]]) - 0.75),
        "MAE": abs(mae([0.0, 0.0], [-3.0, 4.0]) - 3.5),
        "RMSE": abs(rmse([0.0, 0.0], [-3.0, 4.0]) - np.sqrt(12.5)),
        "zero": abs(rmse([1.0, 2.0], [1.0, 2.0])) + abs(mae([1.0, 2.0], [1.0, 2.0])),
        "equal residuals": abs(rmse([0.0] * 3, [2.0] * 3) - mae([0.0] * 3, [2.0] * 3)),
    }
    worst = max(checks.values())
    verdict("metric correctness", worst <= 1e-12, f"max deviation {worst:.1e} over {len(checks)} oracles (<= 1e-12)")


# -------------------------------------------------------------- LOUO harness

def test_louo_harness(verdict, monkeypatch):
    calls = []
    real = evaluation.assert_no_leakage

    def spy(train_frames, test_frames):
        real(train_frames, test_frames)
        calls.append(({f.subject_id for f in train_frames}, {f.subject_id for f in test_frames}))

    monkeypatch.setattr(evaluation, "assert_no_leakage", spy)
    ds = generate_dataset(SynthConfig(n_subjects=4, trials_per_subject=2, length=300, n_classes=4, dwell=(10, 30)))
    report = louo(ds, WindowSpec(Task.RECOGNITION, 10, stride=5), RECOGNITION_CONFIG,
                  TrainConfig(task="recognition", epochs=1))
    disjoint = all(not (a & b) for a, b in calls)
    agg = report.aggregate()["accuracy"]
    gap = abs(agg - np.mean([f.metrics["accuracy"] for f in report.folds]))
    ok = disjoint and len(calls) == len(report.folds) == len(ds.subjects) and gap <= 1e-12
    verdict("LOUO harness", ok, f"{len(report.folds)} folds for {len(ds.subjects)} subjects, "
            f"leakage checked on {len(calls)} folds (disjoint={disjoint}), |aggregate - mean| = {gap:.1e}")


# ------------------------------------------------------------- determinism

def test_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "schema": 1, "task": "recognition", "seed": 7, "train_stride": 5, "eval_stride": 5,
        "synth": {"n_subjects": 3, "trials_per_subject": 1, "length": 300, "n_classes": 4},
        "train": {"epochs": 2},
    }))
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / f"train_{run}")]) == 0
        assert main(["evaluate", "--config", str(cfg), "--out", str(tmp_path / f"eval_{run}")]) == 0
    same = {
        name: (tmp_path / f"{d}_a" / name).read_bytes() == (tmp_path / f"{d}_b" / name).read_bytes()
        for d, name in (("train", "model.ckpt"), ("train", "loss_curve.tsv"),
                        ("eval", "report.txt"), ("eval", "report.tsv"))
    }
    verdict("determinism", all(same.values()), f"byte-identical: {same}")


# --------------------------------------------------------------- desk scale

def _desk(task):
    t0 = time.time()
    report = experiments.run(experiments.recipe(task), seed=0)
    return report, time.time() - t0


@pytest.mark.slow
def test_desk_scale_recognition(verdict):
    report, elapsed = _desk(Task.RECOGNITION)
    acc = report.aggregate()["accuracy"]
    folds = ", ".join(f"{f.subject} {100 * f.metrics['accuracy']:.1f}%" for f in report.folds)
    verdict("desk-scale recognition", acc >= 0.90 and elapsed < 1800,
            f"LOUO accuracy {100 * acc:.2f}% (>= 90%) [{folds}], 4 epochs, {elapsed:.0f} s")


@pytest.mark.slow
def test_desk_scale_gesture_prediction(verdict):
    report, elapsed = _desk(Task.GESTURE_PREDICTION)
    acc = report.aggregate()["accuracy"]
    folds = ", ".join(f"{f.subject} {100 * f.metrics['accuracy']:.1f}%" for f in report.folds)
    verdict("desk-scale gesture prediction", acc >= 0.85 and elapsed < 1800,
            f"LOUO 1 s-ahead accuracy {100 * acc:.2f}% (>= 85%) [{folds}], {elapsed:.0f} s")


@pytest.mark.slow
def test_desk_scale_trajectory(verdict):
    report, elapsed = _desk(Task.TRAJECTORY_PREDICTION)
    ratios = experiments.trajectory_ratios(report)
    agg = report.aggregate()
    verdict("desk-scale trajectory prediction", max(ratios.values()) <= 0.2 and elapsed < 1800,
            f"MAE_d / displacement = {ratios[1]:.3f} (arm 1), {ratios[2]:.3f} (arm 2) (<= 0.2); "
            f"MAE d1 {agg['MAE.d1']:.2f} mm, d2 {agg['MAE.d2']:.2f} mm; {elapsed:.0f} s")


# ------------------------------------------------------ optional: JIGSAWS

JIGSAWS = os.environ.get("SURGFORMER_JIGSAWS")


@pytest.mark.dataset
@pytest.mark.skipif(not JIGSAWS, reason="set SURGFORMER_JIGSAWS to the suturing data directory")
def test_jigsaws_reproduction(verdict):
    ds = load_dataset(JIGSAWS)
    rec = louo(ds, WindowSpec(Task.RECOGNITION, 30), RECOGNITION_CONFIG,
               TrainConfig(task="recognition"), arm="PSM")
    acc = rec.aggregate()["accuracy"]
    ds10 = ds.downsampled(3)
    traj = louo(ds10, WindowSpec(Task.TRAJECTORY_PREDICTION, 10, 10), replace(TRAJECTORY_CONFIG),
                TrainConfig(task="trajectory_prediction"), arm="PSM")
    d1 = traj.aggregate()["MAE.d1"]
    verdict("JIGSAWS reproduction", abs(100 * acc - 89.2) <= 5 and abs(d1 - 2.71) <= 1.5,
            f"recognition {100 * acc:.1f}% (89.2 +- 5), trajectory MAE d1 {d1:.2f} mm (2.71 +- 1.5)")
