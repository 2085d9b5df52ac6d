"""Command-line entry point: generate, train, evaluate, infer, chain, gridsearch.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    POSITION_COLUMNS,
    Dataset,
    PreparedTrial,
    Standardizer,
    Task,
    WindowSpec,
    load_dataset,
    make_frames,
    select_arm,
)
from .config import RunConfig, load_run_config
from .errors import ConfigError, ContractError, DataError, NumericError, ShapeError
from .evaluation import (
    EvalReport,
    assert_no_leakage,
    build_frames,
    evaluate_frames,
    fit_standardizer,
    frame_accuracy,
    louo,
    mae,
    to_mm,
    train_model,
)
from .inference import (
    GesturePredictorAdapter,
    RecognizerAdapter,
    TrainedModel,
    TrajectoryPredictorAdapter,
    chain,
    predict_gestures,
    predict_trajectory,
)
from .numerics import checkpoint
from .plotting import curve_svg, timeline_svg, write as write_svg
from .seeds import derive_seed
from .synthgen import SynthConfig, generate, generate_dataset
from .training import TrainConfig, train
from .transformer import ModelConfig, TransformerModel

log = logging.getLogger("surgformer")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CKPT_NAME = "model.ckpt"
CARD_NAME = "model_card.json"

UNDERSPECIFIED = {
    "feed_forward_width": "4 x model width unless model.d_ff is set",
    "dropout": "applied after positional encoding and inside every residual branch; off at inference",
    "norm_placement": "post-norm, LN(x + sublayer(x))",
    "initialisation": "Glorot uniform weights, zero biases, seeded from the model seed",
    "lr_schedule": "d_dec^-0.5 * min(step^-0.5, step * warmup^-1.5), step = optimizer update",
    "standardisation": "per-feature z-score of the 38 arm features using training statistics",
    "recognition_start_vector": "uniform [0,1)^16, redrawn per window from a derived seed",
    "batching": "loss = per-frame cumulative loss averaged over the batch; last partial batch kept",
}


# ------------------------------------------------------------------ helpers

def prepare_out(out, overwrite: bool) -> Path:
    if out is None:
        raise ConfigError("an output directory is required (--out)")
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigError(f"output directory {out} is not empty; pass --overwrite to replace its files")
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_data(cfg: RunConfig, rate_hz: int | None = None) -> Dataset:
    rate = cfg.rate_hz if rate_hz is None else rate_hz
    if cfg.dataset is not None:
        ds = load_dataset(cfg.dataset, cfg.subjects)
    elif cfg.synth is not None:
        ds = generate_dataset(SynthConfig.from_dict(cfg.synth))
        if cfg.subjects is not None:
            ds = Dataset(ds.root, ds.rate_hz, [t for t in ds.trials if t.subject_id in cfg.subjects])
    else:
        raise DataError("no data source: set 'dataset' or 'synth' in the config")
    if ds.rate_hz % rate:
        raise ConfigError(f"cannot resample {ds.rate_hz} Hz data to {rate} Hz by decimation")
    return ds.downsampled(ds.rate_hz // rate)


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_trained(out: Path, tm: TrainedModel, train_cfg: TrainConfig, provenance: dict) -> None:
    checkpoint.save(out / CKPT_NAME, tm.model.state_dict())
    card = {
        "schema": 1,
        "package_version": __version__,
        "task": tm.task.value,
        "arm": tm.arm,
        "rate_hz": tm.rate_hz,
        "t_obs": tm.t_obs,
        "t_pred": tm.t_pred,
        "model_config": tm.model.config.to_dict(),
        "train_config": train_cfg.to_dict(),
        "standardizer": tm.standardizer.to_dict(),
        "provenance": provenance,
        "underspecified_choices": UNDERSPECIFIED,
    }
    write_json(out / CARD_NAME, card)


def load_trained(path) -> TrainedModel:
    path = Path(path)
    try:
        card = json.loads((path / CARD_NAME).read_text())
    except OSError as exc:
        raise DataError(f"no model card in {path}: {exc}") from None
    model = TransformerModel(ModelConfig.from_dict(card["model_config"]))
    model.load_state_dict(checkpoint.load(path / CKPT_NAME))
    return TrainedModel(model, Task.parse(card["task"]), card["arm"], card["rate_hz"], card["t_obs"],
                        card["t_pred"], Standardizer.from_dict(card["standardizer"]), card)


def run_manifest(cfg: RunConfig, command: str, seeds: dict, extra: dict | None = None) -> dict:
    doc = {"command": command, "package_version": __version__, "seed": cfg.seed,
           "derived_seeds": seeds, "config": cfg.to_dict()}
    doc.update(extra or {})
    return doc


def _progress(prefix=""):
    return lambda epoch, loss: log.info("%sepoch %d mean loss %.6f", prefix, epoch, loss)


# ----------------------------------------------------------------- commands

def cmd_generate(cfg: RunConfig, overwrite: bool = False) -> Path:
    if cfg.synth is None:
        raise ConfigError("generate needs a 'synth' section in the config")
    out = prepare_out(cfg.out, overwrite)
    synth = SynthConfig.from_dict({**cfg.synth, "seed": cfg.synth.get("seed", cfg.seed)})
    generate(synth, out)
    return out


def cmd_train(cfg: RunConfig, overwrite: bool = False) -> Path:
    out = prepare_out(cfg.out, overwrite)
    ds = load_data(cfg)
    trials = ds.trials if cfg.train_subjects is None else [t for t in ds.trials if t.subject_id in cfg.train_subjects]
    if not trials:
        raise DataError("no training trials selected")
    seeds = {"model": derive_seed(cfg.seed, "train", "model"), "train": derive_seed(cfg.seed, "train", "train")}
    model_cfg = replace(cfg.model_config(), seed=seeds["model"])
    train_cfg = replace(cfg.train_config(), seed=seeds["train"])
    tm, history, frames = train_model(trials, cfg.window, cfg.arm, model_cfg, train_cfg, cfg.rate_hz, _progress())
    provenance = {
        "dataset": cfg.dataset if cfg.dataset is not None else "synthetic",
        "subjects": sorted({t.subject_id for t in trials}),
        "n_frames": len(frames),
        "final_epoch_loss": history.epoch_loss[-1],
        "seeds": seeds,
    }
    save_trained(out, tm, train_cfg, provenance)
    (out / "loss_curve.tsv").write_text(history.to_tsv())
    if cfg.plots:
        write_svg(out / "loss_curve.svg", curve_svg(history.epoch_loss, f"{cfg.task.value}: mean loss per epoch"))
    write_json(out / "run_manifest.json", run_manifest(cfg, "train", seeds))
    return out


def cmd_evaluate(cfg: RunConfig, overwrite: bool = False) -> EvalReport:
    out = prepare_out(cfg.out, overwrite)
    ds = load_data(cfg)
    if len(ds.subjects) < 2:
        raise ConfigError(f"LOUO needs at least two subjects; dataset has {ds.subjects}")
    seeds: dict = {}
    report = louo(ds, cfg.window, cfg.model_config(), cfg.train_config(), arm=cfg.arm, seed=cfg.seed,
                  eval_stride=cfg.eval_stride,
                  progress=lambda s, e, l: log.info("fold %s epoch %d mean loss %.6f", s, e, l),
                  seed_log=seeds)
    (out / "report.txt").write_text(report.to_text())
    (out / "report.tsv").write_text(report.to_tsv())
    if cfg.task is Task.TRAJECTORY_PREDICTION:
        lines = ["subject\tstep\tMAE_d1\tMAE_d2"]
        for f in report.folds:
            for k, (a, b) in enumerate(zip(f.per_step["MAE_d1"], f.per_step["MAE_d2"]), start=1):
                lines.append(f"{f.subject}\t{k}\t{a:.6f}\t{b:.6f}")
        (out / "per_step.tsv").write_text("\n".join(lines) + "\n")
    if cfg.plots:
        for f in report.folds:
            if f.timeline is not None:
                trial_id, pred, truth = f.timeline
                write_svg(out / "plots" / f"{f.subject}_{trial_id}.svg",
                          timeline_svg(pred, truth, f"{cfg.task.value}: {trial_id} (held-out {f.subject})"))
            write_svg(out / "plots" / f"{f.subject}_loss.svg", curve_svg(f.loss_curve, f"fold {f.subject}: loss per step"))
    write_json(out / "run_manifest.json", run_manifest(cfg, "evaluate", {"folds": seeds}))
    return report


def cmd_infer(cfg: RunConfig, overwrite: bool = False) -> Path:
    if cfg.checkpoint is None:
        raise ConfigError("infer needs 'checkpoint' (a train output directory)")
    tm = load_trained(cfg.checkpoint)
    out = prepare_out(cfg.out, overwrite)
    ds = load_data(cfg, rate_hz=tm.rate_hz)
    window = WindowSpec(tm.task, tm.t_obs, tm.t_pred, cfg.eval_stride)
    seed = derive_seed(cfg.seed, "infer")
    rows = []
    summary = []
    for trial in ds.trials:
        frames = make_frames(PreparedTrial(trial, tm.arm, tm.standardizer), window)
        if not frames:
            continue
        ev = evaluate_frames(tm, frames, seed)
        offset = 0 if tm.task is Task.RECOGNITION else tm.t_obs
        if ev.labels is not None:
            for f, labels in zip(frames, ev.labels):
                truth = f.target_labels
                rows += [f"{trial.trial_id}\t{f.t}\t{f.t + offset + k}\t{int(p)}\t{int(g)}"
                         for k, (p, g) in enumerate(zip(labels, truth))]
            summary.append(f"{trial.trial_id}\taccuracy\t{ev.metrics['accuracy']:.6f}")
        else:
            truth_mm = to_mm(tm.positions_to_metres(np.stack([f.target for f in frames])))
            for f, pred, true in zip(frames, ev.positions_mm, truth_mm):
                for k in range(tm.t_pred):
                    vals = "\t".join(f"{v:.6f}" for v in (*pred[k], *true[k]))
                    rows.append(f"{trial.trial_id}\t{f.t}\t{f.t + offset + k}\t{vals}")
            summary.append(f"{trial.trial_id}\tMAE_d1_mm\t{ev.metrics['MAE']['d1']:.6f}")
            summary.append(f"{trial.trial_id}\tMAE_d2_mm\t{ev.metrics['MAE']['d2']:.6f}")
    if tm.task is Task.TRAJECTORY_PREDICTION:
        cols = [f"{kind}_{c}" for kind in ("pred", "true") for c in ("x1", "y1", "z1", "x2", "y2", "z2")]
        header = "trial\tt\tsample\t" + "\t".join(cols)
    else:
        header = "trial\tt\tsample\tpredicted\ttruth"
    (out / "predictions.tsv").write_text("\n".join([header] + rows) + "\n")
    (out / "summary.tsv").write_text("\n".join(["trial\tmetric\tvalue"] + summary) + "\n")
    write_json(out / "run_manifest.json", run_manifest(cfg, "infer", {"recognition_start": seed}))
    return out


def cmd_chain(cfg: RunConfig, overwrite: bool = False) -> dict:
    needed = [t.value for t in Task]
    if not cfg.chain or set(cfg.chain) != set(needed):
        raise ConfigError(f"chain needs checkpoints for {needed}")
    models = {t: load_trained(cfg.chain[t.value]) for t in Task}
    for t, tm in models.items():
        if tm.task is not t:
            raise ConfigError(f"checkpoint for {t.value} holds a {tm.task.value} model")
    rec, pred, traj = (models[t] for t in Task)
    adapters = RecognizerAdapter(rec), GesturePredictorAdapter(pred), TrajectoryPredictorAdapter(traj)
    rates = {rec.rate_hz, pred.rate_hz, traj.rate_hz}
    if len(rates) != 1:
        raise ConfigError(f"chained models disagree on sampling rate: {sorted(rates)} Hz")
    out = prepare_out(cfg.out, overwrite)
    ds = load_data(cfg, rate_hz=rec.rate_hz)
    seed = derive_seed(cfg.seed, "chain")
    T, P = pred.t_obs, pred.t_pred
    acc_rec, acc_chain, acc_oracle, err_chain, err_oracle = [], [], [], [], []
    rows = []
    for trial in ds.trials:
        starts = np.arange(0, len(trial) - T - P + 1, cfg.eval_stride)
        if starts.size == 0:
            continue
        raw = np.stack([trial.kinematics[t:t + T] for t in starts])
        pos = select_arm(trial.kinematics, traj.arm)[:, POSITION_COLUMNS]
        cur_pos = np.stack([pos[t:t + P] for t in starts])
        true_cur = np.stack([trial.gestures[t:t + T] for t in starts])
        true_fut = np.stack([trial.gestures[t + T:t + T + P] for t in starts])
        true_end = np.stack([pos[t + T + P - 1] for t in starts])
        res = chain(*adapters, raw, cur_pos, seed=seed, starts=starts)
        oracle_fut = adapters[1].predict(raw, true_cur)
        oracle_pos = adapters[2].predict(raw, true_cur, cur_pos, true_fut)
        acc_rec += [frame_accuracy(a, b) for a, b in zip(res.current_labels, true_cur)]
        acc_chain += [frame_accuracy(a, b) for a, b in zip(res.future_labels, true_fut)]
        acc_oracle += [frame_accuracy(a, b) for a, b in zip(oracle_fut, true_fut)]
        d = lambda x: np.linalg.norm(to_mm(x).reshape(-1, 2, 3), axis=-1)  # noqa: E731
        err_chain.append(np.abs(d(res.positions[:, -1]) - d(true_end)))
        err_oracle.append(np.abs(d(oracle_pos[:, -1]) - d(true_end)))
        for i, t in enumerate(starts):
            p = to_mm(res.positions[i, -1])
            rows.append(f"{trial.trial_id}\t{t}\t{res.current_labels[i][-1]}\t{res.future_labels[i][-1]}\t" + "\t".join(f"{v:.6f}" for v in p))
    if not rows:
        raise DataError("no trial is long enough for the chained window")
    summary = {
        "recognition_accuracy": float(np.mean(acc_rec)),
        "gesture_prediction_accuracy_chained": float(np.mean(acc_chain)),
        "gesture_prediction_accuracy_oracle_input": float(np.mean(acc_oracle)),
        "trajectory_final_step_mae_d_mm_chained": float(np.concatenate(err_chain).mean()),
        "trajectory_final_step_mae_d_mm_oracle_input": float(np.concatenate(err_oracle).mean()),
    }
    header = "trial\tt\tlast_current_label\tlast_future_label\tx1\ty1\tz1\tx2\ty2\tz2"
    (out / "chain_predictions.tsv").write_text("\n".join([header] + rows) + "\n")
    write_json(out / "chain_summary.json", summary)
    write_json(out / "run_manifest.json", run_manifest(cfg, "chain", {"recognition_start": seed}))
    return summary


def expand_grid(grid: dict) -> list[dict]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid search needs at least one value for every grid key")
    model_keys = set(ModelConfig.__dataclass_fields__)
    train_keys = set(TrainConfig.__dataclass_fields__) - {"task", "seed"}
    bad = set(grid) - model_keys - train_keys
    if bad:
        raise ConfigError(f"grid keys {sorted(bad)} are neither model nor training settings")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cmd_gridsearch(cfg: RunConfig, overwrite: bool = False) -> list[dict]:
    """Score every grid combination on one shuffled 70/30 frame split.

    The standardizer is fitted on all trials before the split; rankings are
    relative, so the shared statistics do not favour any combination.
    """
    combos = expand_grid(cfg.grid or {})
    out = prepare_out(cfg.out, overwrite)
    ds = load_data(cfg)
    std = fit_standardizer(ds.trials, cfg.arm)
    frames = build_frames(ds.trials, cfg.window, cfg.arm, std)
    if len(frames) < 2:
        raise DataError("not enough frames for a 70/30 split")
    split_seed = derive_seed(cfg.seed, "grid", "split")
    order = np.random.default_rng(split_seed).permutation(len(frames))
    cut = int(round(0.7 * len(frames)))
    train_frames = [frames[i] for i in order[:cut]]
    val_frames = [frames[i] for i in order[cut:]]
    model_keys = set(ModelConfig.__dataclass_fields__)
    results = []
    for i, combo in enumerate(combos):
        row = {"params": combo}
        try:
            mc = ModelConfig.from_dict({**cfg.model_config().to_dict(),
                                        **{k: v for k, v in combo.items() if k in model_keys},
                                        "seed": derive_seed(cfg.seed, "grid", i, "model")})
            tc = TrainConfig.from_dict({**cfg.train_config().to_dict(),
                                        **{k: v for k, v in combo.items() if k not in model_keys},
                                        "seed": derive_seed(cfg.seed, "grid", i, "train")})
        except ConfigError as exc:
            row.update(status=f"invalid: {exc}", metric=float("nan"), score=float("-inf"))
            results.append(row)
            continue
        model, _ = train(TransformerModel(mc), train_frames, tc, _progress(f"grid {i} "))
        tm = TrainedModel(model, cfg.task, cfg.arm, cfg.rate_hz, cfg.t_obs, cfg.t_pred, std)
        ev = evaluate_frames(tm, val_frames, derive_seed(cfg.seed, "grid", i, "eval"))
        if cfg.task is Task.TRAJECTORY_PREDICTION:
            metric = 0.5 * (ev.metrics["MAE"]["d1"] + ev.metrics["MAE"]["d2"])
            score = -metric
        else:
            metric = score = ev.metrics["accuracy"]
        row.update(status="ok", metric=metric, score=score)
        results.append(row)
    results.sort(key=lambda r: -r["score"])
    metric_name = "mae_d_mm" if cfg.task is Task.TRAJECTORY_PREDICTION else "accuracy"
    keys = sorted(combos[0])
    lines = ["rank\t" + "\t".join(keys) + f"\t{metric_name}\tscore\tstatus"]
    for rank, r in enumerate(results, start=1):
        vals = "\t".join(str(r["params"][k]) for k in keys)
        lines.append(f"{rank}\t{vals}\t{r['metric']:.6f}\t{r['score']:.6f}\t{r['status']}")
    (out / "gridsearch.tsv").write_text("\n".join(lines) + "\n")
    write_json(out / "run_manifest.json", run_manifest(cfg, "gridsearch", {"split": split_seed},
                                                        {"n_train_frames": len(train_frames),
                                                         "n_val_frames": len(val_frames)}))
    return results


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "infer": cmd_infer,
    "chain": cmd_chain,
    "gridsearch": cmd_gridsearch,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--task", choices=[t.value for t in Task])
    common.add_argument("--arm", choices=["MTM", "PSM"])
    common.add_argument("--rate", type=int, dest="rate_hz", help="sampling rate in Hz (30 or 10)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--overwrite", action="store_true", help="replace files in a non-empty --out")
    common.add_argument("--dataset", help="dataset directory (manifest.json or JIGSAWS layout)")
    common.add_argument("--checkpoint", help="train output directory (infer)")
    common.add_argument("--epochs", type=int, help="override train.epochs")
    common.add_argument("--plots", action="store_true", default=None, help="emit SVG plots")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="surgformer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help / --version / usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k) for k in ("task", "arm", "rate_hz", "seed", "out", "dataset",
                                                  "checkpoint", "plots")}
        cfg = load_run_config(args.config, overrides)
        if args.epochs is not None:
            cfg.train = {**cfg.train, "epochs": args.epochs}
        result = COMMANDS[args.command](cfg, overwrite=args.overwrite)
        if isinstance(result, EvalReport):
            print(result.to_text(), end="")
        elif isinstance(result, dict):
            print(json.dumps(result, indent=2, sort_keys=True))
        return EXIT_OK
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ContractError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
