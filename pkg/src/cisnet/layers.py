"""Cover-suppression layers: truncations, sublinear pooling and PReLU.

All maps are differentiable graph nodes built on :func:`cisnet.tensor.elementwise`.
At the kinks (``|x| == T`` for truncation, ``x == 0`` for the power map) the
local derivative is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, avg_pool, elementwise

GLOBAL = "global"
SINGLE_VALUED = "single_valued"
BI_VALUED = "bi_valued"

# magnitude cap on the power-map derivative near zero
MAX_POWER_GRAD = 1e6


@dataclass(frozen=True)
class TruncationConfig:
    """Truncation threshold and mode; ``threshold=inf`` disables truncation."""

    threshold: float = 5.0
    mode: str = SINGLE_VALUED

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"truncation threshold must be positive, got {self.threshold}")
        if self.mode not in (SINGLE_VALUED, BI_VALUED):
            raise ValueError(f"unknown truncation mode {self.mode!r}")


@dataclass(frozen=True)
class SublinearConfig:
    gamma1: float = 1.0
    gamma2: float = 0.9
    window: int | str = 2

    def __post_init__(self):
        _check_gamma(self.gamma1)
        _check_gamma(self.gamma2)
        if self.window != GLOBAL and (not isinstance(self.window, int) or self.window < 1):
            raise ValueError(f"window must be a positive int or GLOBAL, got {self.window!r}")


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"power factor must lie in (0, 1], got {gamma}")


def _check_threshold(T: float) -> None:
    if not T > 0:
        raise ValueError(f"threshold must be positive, got {T}")


def btl(x, T: float) -> Tensor:
    """Bi-valued truncation: clamp to [-T, T]."""
    _check_threshold(T)
    x = as_tensor(x)
    inside = np.abs(x.data) < T
    return elementwise(x, np.clip(x.data, -T, T), inside.astype(np.float64), "btl")


def stl(x, T: float) -> Tensor:
    """Single-valued truncation: keep [-T, T], send every |x| > T to +T."""
    _check_threshold(T)
    x = as_tensor(x)
    a = np.abs(x.data)
    value = np.where(a > T, T, x.data)
    return elementwise(x, value, (a < T).astype(np.float64), "stl")


def truncate(x, cfg: TruncationConfig) -> Tensor:
    if math.isinf(cfg.threshold):
        return as_tensor(x)
    if cfg.mode == SINGLE_VALUED:
        return stl(x, cfg.threshold)
    return btl(x, cfg.threshold)


def sublinear_map(x, gamma: float) -> Tensor:
    """Signed power ``|x|**gamma * sgn(x)``; the identity when gamma == 1."""
    _check_gamma(gamma)
    x = as_tensor(x)
    if gamma == 1.0:
        return x
    a = np.abs(x.data)
    value = np.power(a, gamma) * np.sign(x.data)
    nz = a > 0
    local = np.zeros_like(a)
    local[nz] = np.minimum(gamma * np.power(a[nz], gamma - 1.0), MAX_POWER_GRAD)
    return elementwise(x, value, local, "sublinear")


def spl(x, cfg: SublinearConfig) -> Tensor:
    """Sublinear pooling: power map, average pool, power map."""
    x = as_tensor(x)
    window = x.shape[2:] if cfg.window == GLOBAL else cfg.window
    return sublinear_map(avg_pool(sublinear_map(x, cfg.gamma1), window), cfg.gamma2)


def prelu(x, slope: Tensor) -> Tensor:
    """Channel-wise PReLU on x[N,C,...] with slope[C]; both get gradients."""
    x = as_tensor(x)
    if slope.ndim != 1 or x.ndim < 2 or slope.shape[0] != x.shape[1]:
        raise ValueError(f"prelu: {slope.shape[0] if slope.ndim else '?'} slopes for {x.shape}")
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    a = slope.data.reshape(bshape)
    pos = x.data >= 0
    value = np.where(pos, x.data, a * x.data)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def backward(g):
        gx = np.where(pos, g, g * a)
        ga = np.where(pos, 0.0, g * x.data).sum(axis=reduce_axes)
        return gx, ga

    return Tensor.from_op(value, (x, slope), backward, "prelu")
