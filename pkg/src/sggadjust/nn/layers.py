"""Layer primitives and the post-norm transformer encoder block."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from ..errors import ConfigurationError, ShapeError
from .tensor import Tensor, matmul, softmax

LN_EPS = 1e-5


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator, name: str | None = None) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(n: int, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True, name=name)


def ones(n: int, name: str | None = None) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True, name=name)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``shift``."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / (var + eps).sqrt() * gain + shift


def dropout(x: Tensor, p: float, train_mode: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity outside training or when ``p == 0``."""
    if not train_mode or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


@dataclass
class TransformerBlockParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_shift: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    n_heads: int = 4
    dropout_p: float = 0.1
    tensor_names: ClassVar[tuple] = (
        "wq", "bq", "wk", "wv", "bv", "wo", "bo",
        "w1", "b1", "w2", "b2", "ln1_gain", "ln1_shift", "ln2_gain", "ln2_shift",
    )

    def __post_init__(self):
        e_dim = self.wq.shape[0]
        if e_dim % self.n_heads != 0:
            raise ConfigurationError(
                f"embedding width {e_dim} not divisible by {self.n_heads} heads"
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout probability {self.dropout_p} outside [0, 1)")

    @property
    def e_dim(self) -> int:
        return self.wq.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in self.tensor_names}


def init_transformer_block(
    e_dim: int,
    hidden: int,
    n_heads: int,
    dropout_p: float,
    rng: np.random.Generator,
) -> TransformerBlockParams:
    if e_dim < 1 or hidden < 1 or n_heads < 1:
        raise ConfigurationError("transformer dimensions must be positive")
    if e_dim % n_heads != 0:
        raise ConfigurationError(f"embedding width {e_dim} not divisible by {n_heads} heads")
    return TransformerBlockParams(
        wq=glorot(e_dim, e_dim, rng), bq=zeros(e_dim),
        wk=glorot(e_dim, e_dim, rng),
        wv=glorot(e_dim, e_dim, rng), bv=zeros(e_dim),
        wo=glorot(e_dim, e_dim, rng), bo=zeros(e_dim),
        w1=glorot(e_dim, hidden, rng), b1=zeros(hidden),
        w2=glorot(hidden, e_dim, rng), b2=zeros(e_dim),
        ln1_gain=ones(e_dim), ln1_shift=zeros(e_dim),
        ln2_gain=ones(e_dim), ln2_shift=zeros(e_dim),
        n_heads=n_heads,
        dropout_p=dropout_p,
    )


def multi_head_attention(x: Tensor, p: TransformerBlockParams) -> Tensor:
    """Unmasked scaled dot-product self-attention over axis 1 of (N, S, E)."""
    n, s, e = x.shape
    h = p.n_heads
    d = e // h

    def heads(t: Tensor) -> Tensor:
        return t.reshape(n, s, h, d).transpose(0, 2, 1, 3)

    q = heads(linear(x, p.wq, p.bq))
    # a key bias only shifts each score row by a constant, which softmax cancels
    k = heads(linear(x, p.wk))
    v = heads(linear(x, p.wv, p.bv))
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    attended = matmul(softmax(scores, axis=-1), v)
    merged = attended.transpose(0, 2, 1, 3).reshape(n, s, e)
    return linear(merged, p.wo, p.bo)


def transformer_block(
    x: Tensor,
    params: TransformerBlockParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm encoder block: attention, dropout, residual, LN, FFN, dropout, residual, LN."""
    if x.ndim != 3 or x.shape[-1] != params.e_dim:
        raise ShapeError(f"expected (N, S, {params.e_dim}) input, got {x.shape}")
    p_drop = params.dropout_p
    attn = multi_head_attention(x, params)
    h = x + dropout(attn, p_drop, train_mode, rng)
    h = layer_norm(h, params.ln1_gain, params.ln1_shift)
    y = linear(h, params.w1, params.b1).relu()
    y = dropout(y, p_drop, train_mode, rng)
    y = linear(y, params.w2, params.b2)
    y = h + dropout(y, p_drop, train_mode, rng)
    return layer_norm(y, params.ln2_gain, params.ln2_shift)
