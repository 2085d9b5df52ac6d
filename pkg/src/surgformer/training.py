"""Losses, Adam, the warmup learning-rate schedule and the epoch loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import Frame, Task, stack_frames
from .errors import ConfigError, ContractError, NumericError
from .numerics import ops
from .numerics.tensor import Tensor, backward, reset_tape
from .transformer import TransformerModel

DEFAULT_EPOCHS = {
    Task.RECOGNITION: 15,
    Task.GESTURE_PREDICTION: 40,
    Task.TRAJECTORY_PREDICTION: 50,
}


@dataclass
class TrainConfig:
    task: Task = Task.RECOGNITION
    batch_size: int = 64
    epochs: int | None = None  # None -> task default (15 / 40 / 50)
    warmup_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    seed: int = 0
    shuffle: bool = True
    shift_row: str = "zero"  # recognition decoder row 0 in training: zero | random
    grad_clip: float | None = None
    lr_scale: float = 1.0

    def __post_init__(self):
        self.task = Task.parse(self.task)
        if self.epochs is None:
            self.epochs = DEFAULT_EPOCHS[self.task]
        for name in ("batch_size", "epochs", "warmup_steps"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.shift_row not in ("zero", "random"):
            raise ConfigError(f"shift_row must be 'zero' or 'random', got {self.shift_row!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**known)


def lr_schedule(step: int, d_dec: int, warmup_steps: int = 2000) -> float:
    """d_dec^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup, then
    inverse-square-root decay."""
    if step < 1:
        raise ContractError(f"learning-rate step must be >= 1, got {step}")
    return d_dec ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


def gesture_loss(logits, target) -> Tensor:
    """Categorical cross-entropy summed over the time steps."""
    return ops.cross_entropy_with_logits(logits, target)


def trajectory_loss(pred, target) -> Tensor:
    """Per-step Euclidean distance over the position coordinates, summed over time."""
    return ops.sum(ops.row_norm(ops.sub(pred, target)))


def task_loss(task: Task, out: Tensor, target) -> Tensor:
    if task is Task.TRAJECTORY_PREDICTION:
        return trajectory_loss(out, target)
    return gesture_loss(out, target)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.98, eps=1e-9):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)  # (step, lr, loss)
    epoch_loss: list = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["step\tlr\tloss"]
        lines += [f"{s}\t{lr:.10e}\t{loss:.10e}" for s, lr, loss in self.steps]
        return "\n".join(lines) + "\n"


def shift_rows_for(frames, cfg: TrainConfig, rng: np.random.Generator):
    if cfg.task is not Task.RECOGNITION or cfg.shift_row == "zero":
        return None
    return rng.random((len(frames), frames[0].target.shape[-1]))


def clip_gradients(params, max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


def train(model: TransformerModel, frames: list[Frame], cfg: TrainConfig, progress=None):
    """Teacher-forced minibatch training.  Returns (model, TrainHistory).

    The batch loss is the per-frame cumulative loss averaged over the frames in
    the batch; the final partial batch of an epoch is kept.
    """
    if not frames:
        raise ContractError("train() needs at least one frame")
    wrong = {f.task for f in frames} - {cfg.task}
    if wrong:
        raise ContractError(f"frames for {sorted(t.value for t in wrong)} passed to a {cfg.task.value} trainer")
    rng = np.random.default_rng([cfg.seed, 0])
    model.reseed_dropout([cfg.seed, 1])
    params = model.parameters()
    opt = Adam(params, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainHistory()
    d_dec = model.config.d_dec
    n = len(frames)
    order = np.arange(n)
    step = 0
    for epoch in range(cfg.epochs):
        if cfg.shuffle:
            order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            batch = [frames[i] for i in order[lo:lo + cfg.batch_size]]
            enc, dec, tgt = stack_frames(batch, shift_rows_for(batch, cfg, rng))
            step += 1
            lr = cfg.lr_scale * lr_schedule(step, d_dec, cfg.warmup_steps)
            reset_tape()
            opt.zero_grad()
            out = model.forward(enc, dec, train_mode=True)
            loss = ops.scale(task_loss(cfg.task, out, tgt), 1.0 / len(batch))
            value = float(loss.data)
            if not math.isfinite(value):
                reset_tape()
                raise NumericError(f"non-finite loss {value} at step {step} (epoch {epoch + 1})", step)
            backward(loss)
            reset_tape()
            if cfg.grad_clip is not None:
                clip_gradients(params, cfg.grad_clip)
            opt.step(lr)
            history.steps.append((step, lr, value))
            total += value * len(batch)
        history.epoch_loss.append(total / n)
        if progress is not None:
            progress(epoch + 1, history.epoch_loss[-1])
    return model, history
