"""Generalized-mean pooling over K activation maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BadParamsError, EmptyMapError, ShapeMismatchError

GEM_CLAMP = 1e-6
GEM_INIT_P = 3.0


@dataclass(frozen=True)
class GemParams:
    p: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=np.float64))
        if p.ndim != 1 or not np.isfinite(p).all() or (p <= 0).any():
            raise BadParamsError("GeM exponents must be finite and strictly positive")
        object.__setattr__(self, "p", p)

    @classmethod
    def init(cls, k: int, value: float = GEM_INIT_P) -> "GemParams":
        return cls(np.full(k, value))


@dataclass
class GemResult:
    values: np.ndarray  # (K,)
    grad_maps: np.ndarray  # d f_k / d x_{k,i}, same shape as the input maps
    grad_p: np.ndarray  # d f_k / d p_k, (K,)


def gem_pool(maps, params: GemParams) -> GemResult:
    """``f_k = (mean_i x_i^p_k)^(1/p_k)`` per map, with activations clamped at 1e-6.

    ``maps`` is K x (W*H) or K x W x H. Evaluation is scaled by each map's
    maximum so large exponents do not overflow.
    """
    x_raw = np.asarray(maps, dtype=np.float64)
    if x_raw.ndim < 2:
        raise ShapeMismatchError("maps must have a leading K axis and at least one spatial axis")
    k = x_raw.shape[0]
    if x_raw[0].size == 0:
        raise EmptyMapError("feature maps have no activations")
    p = params.p
    if p.shape[0] == 1 and k != 1:
        p = np.full(k, p[0])
    if p.shape[0] != k:
        raise ShapeMismatchError(f"{p.shape[0]} exponents for {k} maps")

    flat = x_raw.reshape(k, -1)
    x = np.maximum(flat, GEM_CLAMP)
    m = x.shape[1]
    pc = p[:, None]
    top = x.max(axis=1, keepdims=True)
    r = x / top
    rp = r**pc
    mean_rp = rp.mean(axis=1, keepdims=True)
    f = top * mean_rp ** (1.0 / pc)

    # d f / d x_i = (1/M) x_i^(p-1) f^(1-p) = (1/M) (x_i/f)^(p-1)
    grad_x = (x / f) ** (pc - 1.0) / m
    grad_x = np.where(flat > GEM_CLAMP, grad_x, 0.0)

    # ln f = ln(mean x^p) / p  =>  d f / d p = f * (E[x^p ln x] / E[x^p] - ln(mean x^p)) / p
    log_x = np.log(x)
    weighted_log = (rp * log_x).mean(axis=1, keepdims=True) / mean_rp
    log_mean = pc * np.log(top) + np.log(mean_rp)
    grad_p = f * (weighted_log - log_mean / pc) / pc

    return GemResult(f[:, 0], grad_x.reshape(x_raw.shape), grad_p[:, 0])
