"""Encoder-decoder Transformer without input embeddings or padding masks.

Differences from the NLP original: inputs are continuous feature vectors
(positional encoding is added to them directly), there is no padding mask,
and a fully connected layer maps the encoder output from ``d_enc`` to
``d_dec`` so cross-attention can run in the decoder's width.

Layers use the post-norm residual arrangement ``LN(x + sublayer(x))``.
Inputs are ``[T, d]`` or batched ``[B, T, d]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import ops
from .numerics.layers import LayerNorm, Linear, Module
from .numerics.tensor import Tensor, as_tensor

MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 1
    heads_enc: int = 1
    heads_dec: int = 1
    d_enc: int = 38
    d_dec: int = 16
    d_out: int = 16
    d_ff: int | None = None  # None -> 4 * d_model of each stack
    dropout_p: float = 0.1
    max_len: int = 512
    seed: int = 0

    def __post_init__(self):
        for name in ("n_layers", "heads_enc", "heads_dec", "d_enc", "d_dec", "d_out", "max_len"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d_ff is not None and self.d_ff <= 0:
            raise ConfigError(f"d_ff must be positive, got {self.d_ff}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.d_enc % self.heads_enc:
            raise ConfigError(f"d_enc={self.d_enc} is not divisible by heads_enc={self.heads_enc}")
        if self.d_dec % self.heads_dec:
            raise ConfigError(f"d_dec={self.d_dec} is not divisible by heads_dec={self.heads_dec}")
        if self.d_enc % 2 or self.d_dec % 2:
            raise ConfigError(
                f"d_enc={self.d_enc} and d_dec={self.d_dec} must be even for sinusoidal positions"
            )

    def ff_width(self, d_model: int) -> int:
        return self.d_ff if self.d_ff is not None else 4 * d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**known)


# Configurations reported for the three tasks.
RECOGNITION_CONFIG = ModelConfig(n_layers=1, heads_enc=1, heads_dec=1, d_enc=38, d_dec=16, d_out=16)
GESTURE_PREDICTION_CONFIG = ModelConfig(n_layers=4, heads_enc=1, heads_dec=4, d_enc=38, d_dec=16, d_out=16)
TRAJECTORY_CONFIG = ModelConfig(n_layers=1, heads_enc=6, heads_dec=11, d_enc=54, d_dec=22, d_out=6)


def positional_encoding(T: int, d: int) -> np.ndarray:
    if d % 2:
        raise ConfigError(f"positional encoding needs an even dimension, got {d}")
    pos = np.arange(T, dtype=np.float64)[:, None]
    i2 = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i2 / d)
    pe = np.empty((T, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def look_ahead_mask(T: int) -> np.ndarray:
    """Additive mask: 0 where key j <= query i, MASK_VALUE above the diagonal."""
    if T < 1:
        raise ConfigError(f"mask length must be >= 1, got {T}")
    return np.triu(np.full((T, T), MASK_VALUE), k=1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + mask) v over the last two axes."""
    d_k = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(d_k))
    if mask is not None:
        scores = ops.add(scores, Tensor(mask))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        *lead, T, d = x.shape
        h = self.heads
        x = ops.reshape(x, (*lead, T, h, d // h))
        n = x.ndim
        axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
        return ops.transpose(x, axes)

    def _merge(self, x: Tensor) -> Tensor:
        n = x.ndim
        axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
        x = ops.transpose(x, axes)
        *lead, T, h, dh = x.shape
        return ops.reshape(x, (*lead, T, h * dh))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
        d = self.w_q.d_in
        for name, t in (("query", q), ("key", k), ("value", v)):
            if t.shape[-1] != d:
                raise ShapeError(f"attention {name} width {t.shape[-1]} != {d}")
        if k.shape[-2] != v.shape[-2]:
            raise ShapeError(f"attention keys {k.shape} and values {v.shape} differ in length")
        heads = scaled_dot_attention(
            self._split(self.w_q(q)), self._split(self.w_k(k)), self._split(self.w_v(v)), mask
        )
        return self.w_o(self._merge(heads))


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def __call__(self, x):
        return self.outer(ops.relu(self.inner(x)))


class EncoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, rng):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)
        self.norm2 = LayerNorm(d)

    def __call__(self, x, drop):
        x = self.norm1(ops.add(x, drop(self.self_attn(x, x, x))))
        return self.norm2(ops.add(x, drop(self.ff(x))))


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, d_ff: int, rng):
        self.self_attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)
        self.norm3 = LayerNorm(d)

    def __call__(self, x, memory, mask, drop):
        x = self.norm1(ops.add(x, drop(self.self_attn(x, x, x, mask))))
        x = self.norm2(ops.add(x, drop(self.cross_attn(x, memory, memory))))
        return self.norm3(ops.add(x, drop(self.ff(x))))


class TransformerModel(Module):
    def __init__(self, config: ModelConfig):
        self._config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.encoder_layers = [
            EncoderLayer(c.d_enc, c.heads_enc, c.ff_width(c.d_enc), rng) for _ in range(c.n_layers)
        ]
        self.encoder_output = Linear(c.d_enc, c.d_dec, rng)
        self.decoder_layers = [
            DecoderLayer(c.d_dec, c.heads_dec, c.ff_width(c.d_dec), rng) for _ in range(c.n_layers)
        ]
        self.output = Linear(c.d_dec, c.d_out, rng)
        self._dropout_rng = np.random.default_rng([c.seed, 1])
        self._pe_enc = positional_encoding(c.max_len, c.d_enc)
        self._pe_dec = positional_encoding(c.max_len, c.d_dec)

    @property
    def config(self) -> ModelConfig:
        return self._config

    def reseed_dropout(self, seed) -> None:
        self._dropout_rng = np.random.default_rng(seed)

    def _dropper(self, train_mode: bool):
        p = self._config.dropout_p
        if not train_mode or p == 0.0:
            return lambda x: x
        rng = self._dropout_rng
        return lambda x: ops.dropout(x, p, rng)

    def _check_input(self, x: Tensor, width: int, where: str) -> None:
        if x.ndim not in (2, 3) or x.shape[-1] != width:
            raise ShapeError(f"{where} input: expected [.., T, {width}], got {x.shape}")
        if x.shape[-2] > self._config.max_len:
            raise ShapeError(f"{where} input length {x.shape[-2]} exceeds max_len {self._config.max_len}")

    def encode(self, enc_in, train_mode: bool = False) -> Tensor:
        """Encoder stack followed by the d_enc -> d_dec output projection."""
        enc_in = as_tensor(enc_in)
        self._check_input(enc_in, self._config.d_enc, "encoder")
        drop = self._dropper(train_mode)
        T = enc_in.shape[-2]
        x = drop(ops.add(enc_in, Tensor(self._pe_enc[:T])))
        for layer in self.encoder_layers:
            x = layer(x, drop)
        return self.encoder_output(x)

    def decode(self, dec_in, memory: Tensor, train_mode: bool = False) -> Tensor:
        dec_in = as_tensor(dec_in)
        self._check_input(dec_in, self._config.d_dec, "decoder")
        if dec_in.ndim != memory.ndim or dec_in.shape[:-2] != memory.shape[:-2]:
            raise ShapeError(f"decoder input {dec_in.shape} and encoder output {memory.shape} batch dims differ")
        drop = self._dropper(train_mode)
        T = dec_in.shape[-2]
        mask = look_ahead_mask(T)
        x = drop(ops.add(dec_in, Tensor(self._pe_dec[:T])))
        for layer in self.decoder_layers:
            x = layer(x, memory, mask, drop)
        return self.output(x)

    def forward(self, enc_in, dec_in, train_mode: bool = False) -> Tensor:
        return self.decode(dec_in, self.encode(enc_in, train_mode), train_mode)

    __call__ = forward


def parameter_count(config: ModelConfig) -> int:
    """Closed-form number of trainable scalars for ``config``.

    attention(d) = 4 (d^2 + d); feed-forward(d, f) = 2 d f + f + d;
    layer norm(d) = 2 d.  An encoder layer has one attention block, one
    feed-forward and two norms; a decoder layer two attention blocks, one
    feed-forward and three norms.
    """
    def attn(d):
        return 4 * (d * d + d)

    def ff(d, f):
        return 2 * d * f + f + d

    e, dd, o, n = config.d_enc, config.d_dec, config.d_out, config.n_layers
    enc_layer = attn(e) + ff(e, config.ff_width(e)) + 2 * 2 * e
    dec_layer = 2 * attn(dd) + ff(dd, config.ff_width(dd)) + 3 * 2 * dd
    return n * (enc_layer + dec_layer) + (e * dd + dd) + (dd * o + o)
