"""Dot-product non-local block on a flattened N x C feature map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatchError


@dataclass
class NonLocalParams:
    """Block weights.

    ``w_theta``, ``w_phi``, ``w_g`` are C x B embeddings, ``w_z`` is B x C.
    ``scale``/``shift`` are the per-channel affine of the normalisation that
    follows ``w_z``; both start at zero so a fresh block is the identity.
    """

    w_theta: np.ndarray
    w_phi: np.ndarray
    w_g: np.ndarray
    w_z: np.ndarray
    scale: np.ndarray
    shift: np.ndarray

    @property
    def channels(self) -> int:
        return self.w_theta.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.w_theta.shape[1]

    def validate(self):
        c, b = self.w_theta.shape
        if b > c:
            raise ShapeMismatchError(f"bottleneck {b} exceeds channel count {c}")
        for name in ("w_phi", "w_g"):
            if getattr(self, name).shape != (c, b):
                raise ShapeMismatchError(f"{name} must be {c}x{b}")
        if self.w_z.shape != (b, c):
            raise ShapeMismatchError(f"w_z must be {b}x{c}")
        if self.scale.shape != (c,) or self.shift.shape != (c,):
            raise ShapeMismatchError(f"scale and shift must have length {c}")

    @classmethod
    def init(cls, channels: int, bottleneck: int, rng: np.random.Generator) -> "NonLocalParams":
        std = 1.0 / np.sqrt(channels)
        return cls(
            w_theta=rng.normal(0.0, std, (channels, bottleneck)),
            w_phi=rng.normal(0.0, std, (channels, bottleneck)),
            w_g=rng.normal(0.0, std, (channels, bottleneck)),
            w_z=rng.normal(0.0, 1.0 / np.sqrt(bottleneck), (bottleneck, channels)),
            scale=np.zeros(channels),
            shift=np.zeros(channels),
        )

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}


PARAM_NAMES = ("w_theta", "w_phi", "w_g", "w_z", "scale", "shift")


def _forward_parts(x, params):
    theta = x @ params.w_theta
    phi = x @ params.w_phi
    g = x @ params.w_g
    affinity = theta @ phi.T / x.shape[0]
    y = affinity @ g
    u = y @ params.w_z
    return theta, phi, g, affinity, y, u


def _check(x, params):
    x = np.asarray(x, dtype=np.float64)
    params.validate()
    if x.ndim != 2 or x.shape[1] != params.channels:
        raise ShapeMismatchError(f"input {x.shape} vs {params.channels} channels")
    return x


def nonlocal_block(x, params: NonLocalParams) -> np.ndarray:
    """``z_i = x_i + scale * (W_z y_i) + shift`` with ``y_i = (1/N) sum_j (theta_i . phi_j) g_j``."""
    x = _check(x, params)
    u = _forward_parts(x, params)[-1]
    return x + u * params.scale + params.shift


def nonlocal_backward(x, params: NonLocalParams, grad_out) -> dict:
    """Vector-Jacobian product of :func:`nonlocal_block` for upstream gradient ``grad_out``."""
    x = _check(x, params)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise ShapeMismatchError("grad_out must match the input shape")
    n = x.shape[0]
    theta, phi, g, affinity, y, u = _forward_parts(x, params)

    g_scale = (grad_out * u).sum(axis=0)
    g_shift = grad_out.sum(axis=0)
    g_u = grad_out * params.scale
    g_wz = y.T @ g_u
    g_y = g_u @ params.w_z.T
    g_aff = g_y @ g.T
    g_g = affinity.T @ g_y
    g_theta = g_aff @ phi / n
    g_phi = g_aff.T @ theta / n
    return {
        "x": grad_out + g_theta @ params.w_theta.T + g_phi @ params.w_phi.T + g_g @ params.w_g.T,
        "w_theta": x.T @ g_theta,
        "w_phi": x.T @ g_phi,
        "w_g": x.T @ g_g,
        "w_z": g_wz,
        "scale": g_scale,
        "shift": g_shift,
    }
