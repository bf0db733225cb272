"""Spiking stages: LIF dynamics, spiking self-attention, conv encoder, linear decoder.

Spike trains are plain :class:`Tensor` objects holding only 0/1 with the
time axis at ``time_axis`` (0 unless a batch axis precedes it).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ConfigError, ContractError, ShapeError, UsageError
from .tensor import Tensor


@dataclass(frozen=True)
class LIFParams:
    beta: float = 0.9
    threshold: float = 1.0
    alpha: float = 2.0
    # arctan-sigmoid forward instead of the hard step; used only for gradient checks
    smooth: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}")
        if self.threshold <= 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")
        if self.alpha <= 0:
            raise ConfigError(f"surrogate alpha must be positive, got {self.alpha}")


@dataclass
class SSAParams:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    scale: float = 0.125
    lif: LIFParams = LIFParams()

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"SSA scale must be positive, got {self.scale}")


def is_binary(t: Tensor) -> bool:
    d = t.data
    return bool(np.all((d == 0) | (d == 1)))


def check_spikes(t: Tensor, what: str, p: LIFParams | None = None) -> None:
    if p is not None and p.smooth:
        return
    if not is_binary(t):
        raise ContractError(f"{what}: expected a binary spike tensor")


def surrogate_gradient(v: float, p: LIFParams) -> float:
    """Arctan surrogate for dS/dV: ``alpha / (2 (1 + (pi/2 alpha (v - theta))^2))``."""
    return float(tn.arctan_surrogate(np.float64(v), p.threshold, p.alpha))


def lif_step(v: Tensor, current: Tensor, p: LIFParams) -> tuple[Tensor, Tensor]:
    if v.shape != current.shape:
        raise ShapeError(f"membrane {v.shape} and input {current.shape} differ")
    u = v * p.beta + current
    s = tn.spike(u, p.threshold, p.alpha, smooth=p.smooth)
    return u * (1.0 - s), s


def lif_run(inputs: Tensor, p: LIFParams, time_axis: int = 0,
            return_membrane: bool = False):
    """Run LIF dynamics over the time axis starting from V = 0.

    Computes exactly what a loop of :func:`lif_step` calls computes, fused
    into one tape node. With ``return_membrane`` also returns the list of
    post-step membrane arrays.
    """
    if inputs.ndim == 0 or inputs.shape[time_axis] == 0:
        raise UsageError("lif_run needs at least one timestep")
    spikes, membranes = tn.lif_scan(inputs, p.beta, p.threshold, p.alpha, p.smooth,
                                    axis=time_axis % inputs.ndim)
    return (spikes, membranes) if return_membrane else spikes


def direct_encode(x: Tensor, timesteps: int, time_axis: int = 0) -> Tensor:
    """Repeat a real-valued tensor at every timestep (no stochastic coding)."""
    if timesteps < 1:
        raise UsageError("timesteps must be >= 1")
    return tn.stack([x] * timesteps, axis=time_axis)


def ssa_maps(x_s: Tensor, p: SSAParams, time_axis: int = 0) -> dict[str, Tensor]:
    """Spiking self-attention with every intermediate map exposed.

    ``x_s`` is ``[T, n, d]`` (optionally batch-first with ``time_axis=1``).
    Scores ``Q K^T V`` are computed per timestep on binary maps, so they are
    non-negative integers; no softmax is involved.
    """
    check_spikes(x_s, "spiking_self_attention input", p.lif)
    d = x_s.shape[-1]
    for name in ("w_q", "w_k", "w_v"):
        if getattr(p, name).shape != (d, d):
            raise ShapeError(f"SSA {name} must be {d}x{d}")
    q = lif_run(x_s @ p.w_q, p.lif, time_axis)
    k = lif_run(x_s @ p.w_k, p.lif, time_axis)
    v = lif_run(x_s @ p.w_v, p.lif, time_axis)
    scores = (q @ tn.swap_last(k)) @ v
    out = lif_run(scores * p.scale, p.lif, time_axis)
    return {"q": q, "k": k, "v": v, "scores": scores, "out": out}


def spiking_self_attention(x_s: Tensor, p: SSAParams, time_axis: int = 0) -> Tensor:
    return ssa_maps(x_s, p, time_axis)["out"]


def snn_encode(spikes: Tensor, weight: Tensor, bias: Tensor | None, p: LIFParams,
               stride: int = 1, padding: int = 0, time_axis: int = 0) -> Tensor:
    """Per-timestep ``conv1d`` on ``[T, C, L]`` spikes, then LIF with carried state."""
    check_spikes(spikes, "snn_encode input", p)
    cur = tn.conv1d(spikes, weight, stride=stride, padding=padding)
    if bias is not None:
        cur = cur + tn.reshape(bias, (bias.shape[0], 1))
    return lif_run(cur, p, time_axis)


def snn_decode(spikes: Tensor, weight: Tensor, bias: Tensor, p: LIFParams,
               time_axis: int = 0) -> Tensor:
    """Per-timestep affine map on ``[T, m]`` spikes, then LIF with carried state."""
    check_spikes(spikes, "snn_decode input", p)
    if spikes.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ShapeError(f"decode shapes: spikes {spikes.shape}, W {weight.shape}, b {bias.shape}")
    return lif_run(spikes @ weight + bias, p, time_axis)


def rate_decode(spikes: Tensor, time_axis: int = 0) -> Tensor:
    if spikes.ndim == 0 or spikes.shape[time_axis] == 0:
        raise UsageError("rate_decode needs at least one timestep")
    return tn.mean(spikes, axis=time_axis)
