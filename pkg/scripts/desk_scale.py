"""Desk-scale LOUO experiment on synthetic data.

    python3 scripts/desk_scale.py recognition
    python3 scripts/desk_scale.py gesture_prediction --seed 1
    python3 scripts/desk_scale.py trajectory_prediction --out runs/traj.txt
"""

import argparse
import time
from pathlib import Path

from surgformer import experiments
from surgformer.dataio import Task


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("task", choices=[t.value for t in Task])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, help="override the recipe's epoch budget")
    ap.add_argument("--out", help="also write the report text here")
    args = ap.parse_args()

    r = experiments.recipe(args.task, seed=args.seed)
    if args.epochs:
        r.train.epochs = args.epochs
    t0 = time.time()

    def progress(subject, epoch, loss):
        print(f"fold {subject} epoch {epoch} loss {loss:.4f} ({time.time() - t0:.0f} s)", flush=True)

    report = experiments.run(r, seed=args.seed, progress=progress)
    text = report.to_text()
    if r.task is Task.TRAJECTORY_PREDICTION:
        ratios = experiments.trajectory_ratios(report)
        text += "MAE_d / displacement: " + ", ".join(f"arm {a} {v:.3f}" for a, v in ratios.items()) + "\n"
    text += f"wall clock {time.time() - t0:.0f} s\n"
    print(text, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)


if __name__ == "__main__":
    main()
