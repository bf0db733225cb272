"""Transformer stages: feature embedding, positional encoding, attention, encoder layer.

All functions accept arbitrary leading batch axes: token matrices are
``[..., n, d]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class EmbeddingParams:
    """Per-feature affine lift: one token per scalar input feature."""

    weight: Tensor  # [N, d]
    bias: Tensor  # [N, d]

    def __post_init__(self):
        n, d = self.weight.shape
        if self.bias.shape != (n, d):
            raise ShapeError(f"embedding bias {self.bias.shape} != weight {self.weight.shape}")
        # evenness of d is enforced where positional encoding is added
        if n < 1 or d < 2:
            raise ConfigError(f"embedding needs N>=1 and d>=2, got N={n}, d={d}")

    @property
    def n_features(self) -> int:
        return self.weight.shape[0]

    @property
    def d_model(self) -> int:
        return self.weight.shape[1]


@dataclass
class MHAParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {getattr(self, name).shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise ConfigError(f"d_model={d} not divisible by n_heads={self.n_heads}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]


@dataclass
class EncoderLayerParams:
    mha: MHAParams
    w1: Tensor  # [d, d_ff]
    b1: Tensor
    w2: Tensor  # [d_ff, d]
    b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    eps: float = 1e-5

    def __post_init__(self):
        d = self.mha.d_model
        d_ff = self.w1.shape[1]
        if self.w1.shape != (d, d_ff) or self.w2.shape != (d_ff, d):
            raise ShapeError(f"FFN shapes {self.w1.shape}/{self.w2.shape} inconsistent with d={d}")
        if d_ff < d:
            raise ConfigError(f"d_ff={d_ff} must be >= d_model={d}")


def embed_features(x, p: EmbeddingParams) -> Tensor:
    """``token_i = x_i * W[i] + b[i]``; ``x`` is ``[..., N]``, result ``[..., N, d]``."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim < 1 or x.shape[-1] != p.n_features:
        raise ShapeError(f"expected {p.n_features} features, got shape {x.shape}")
    tn.record_macs(x.size * p.d_model)
    cols = tn.reshape(x, x.shape + (1,))
    return cols * p.weight + p.bias


def positional_encoding(n_tokens: int, d: int) -> Tensor:
    if d % 2:
        raise ConfigError(f"positional encoding needs even d, got {d}")
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((n_tokens, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return Tensor(pe)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    scores = (q @ tn.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    return tn.softmax(scores, axis=-1)


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if not (q.shape == k.shape == v.shape):
        raise ShapeError(f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    return attention_weights(q, k) @ v


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    x = tn.reshape(x, (*lead, n, h, d // h))
    nd = x.ndim
    return tn.transpose(x, (*range(nd - 3), nd - 2, nd - 3, nd - 1))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nd = x.ndim
    x = tn.transpose(x, (*range(nd - 3), nd - 2, nd - 3, nd - 1))
    return tn.reshape(x, (*lead, n, h * dh))


def multi_head_attention(x: Tensor, p: MHAParams) -> Tensor:
    if x.shape[-1] != p.d_model:
        raise ShapeError(f"input width {x.shape[-1]} != d_model {p.d_model}")
    h = p.n_heads
    q = _split_heads(x @ p.w_q, h)
    k = _split_heads(x @ p.w_k, h)
    v = _split_heads(x @ p.w_v, h)
    return _merge_heads(scaled_dot_product_attention(q, k, v)) @ p.w_o


def feed_forward(y: Tensor, p: EncoderLayerParams) -> Tensor:
    return tn.relu(y @ p.w1 + p.b1) @ p.w2 + p.b2


def transformer_encoder_layer(x: Tensor, p: EncoderLayerParams) -> Tensor:
    """Post-norm encoder block: ``LN(X + MHA(X))`` then ``LN(Y + FFN(Y))``."""
    y = tn.layer_norm(x + multi_head_attention(x, p.mha), p.ln1_gamma, p.ln1_beta, p.eps)
    return tn.layer_norm(y + feed_forward(y, p), p.ln2_gamma, p.ln2_beta, p.eps)
