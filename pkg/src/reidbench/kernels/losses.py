"""Loss kernels with hand-derived gradients.

Every function returns a :class:`LossValueGrad` whose ``grads`` holds one
array per differentiable input, keyed by the argument name.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    BadLabelError,
    BadParamsError,
    DegenerateBatchError,
    ShapeMismatchError,
)

PROB_CLAMP = 1e-12


@dataclass
class LossValueGrad:
    value: float
    grads: dict = field(default_factory=dict)

    def __post_init__(self):
        self.value = float(self.value)
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite loss value {self.value}")
        for name, g in self.grads.items():
            if not np.all(np.isfinite(g)):
                raise ValueError(f"non-finite gradient for {name!r}")


@dataclass(frozen=True)
class BatchLabels:
    person_ids: np.ndarray
    n_classes: int

    def __post_init__(self):
        ids = np.asarray(self.person_ids, dtype=np.int64).reshape(-1)
        if self.n_classes < 1:
            raise BadLabelError("n_classes must be >= 1")
        if (ids < 0).any() or (ids >= self.n_classes).any():
            raise BadLabelError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "person_ids", ids)

    def __len__(self):
        return len(self.person_ids)


@dataclass(frozen=True)
class MemoryBank:
    vectors: np.ndarray
    temperature: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ShapeMismatchError("memory bank must be a c x D matrix with c >= 1")
        if not self.temperature > 0:
            raise BadParamsError("temperature must be positive")
        object.__setattr__(self, "vectors", v)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def smoothed_targets(labels: BatchLabels, epsilon: float) -> np.ndarray:
    """Label-smoothed targets: ``1 - (C-1)/C * eps`` on the true class, ``eps/C`` elsewhere."""
    c = labels.n_classes
    q = np.full((len(labels), c), epsilon / c)
    q[np.arange(len(labels)), labels.person_ids] = 1.0 - (c - 1) / c * epsilon
    return q


def identity_loss(logits, labels: BatchLabels, smoothing: float = 0.0) -> LossValueGrad:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape != (len(labels), labels.n_classes):
        raise ShapeMismatchError(
            f"logits {logits.shape} vs {len(labels)} labels over {labels.n_classes} classes"
        )
    if not 0.0 <= smoothing < 1.0:
        raise BadParamsError(f"smoothing must be in [0, 1), got {smoothing}")
    n = logits.shape[0]
    q = smoothed_targets(labels, smoothing)
    logp = _log_softmax(logits)
    value = -(q * logp).sum() / n
    grad = (np.exp(logp) - q) / n
    return LossValueGrad(value, {"logits": grad})


def contrastive_loss(d, same_id, margin: float = 1.0) -> LossValueGrad:
    """Contrastive loss; array inputs are averaged."""
    if not margin > 0:
        raise BadParamsError("margin must be positive")
    d = np.asarray(d, dtype=np.float64)
    same = np.broadcast_to(np.asarray(same_id, dtype=bool), d.shape)
    if (d < 0).any():
        raise BadParamsError("distances must be non-negative")
    gap = np.maximum(0.0, margin - d)
    per = np.where(same, d * d, gap * gap)
    grad = np.where(same, 2.0 * d, -2.0 * gap)
    return LossValueGrad(per.mean(), {"d": grad / per.size})


def verification_loss(p_pos, same_id) -> LossValueGrad:
    """Binary cross-entropy on the predicted same-identity probability."""
    p_raw = np.asarray(p_pos, dtype=np.float64)
    same = np.broadcast_to(np.asarray(same_id, dtype=bool), p_raw.shape)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per = np.where(same, -np.log(p), -np.log1p(-p))
    grad = np.where(same, -1.0 / p, 1.0 / (1.0 - p))
    grad = np.where(p == p_raw, grad, 0.0)
    return LossValueGrad(per.mean(), {"p_pos": grad / per.size})


def triplet_loss(d_pos, d_neg, margin: float = 0.3) -> LossValueGrad:
    if margin < 0:
        raise BadParamsError("margin must be non-negative")
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_neg = np.asarray(d_neg, dtype=np.float64)
    if (d_pos < 0).any() or (d_neg < 0).any():
        raise BadParamsError("distances must be non-negative")
    x = margin + d_pos - d_neg
    active = (x > 0).astype(np.float64) / x.size
    return LossValueGrad(np.maximum(x, 0.0).mean(), {"d_pos": active, "d_neg": -active})


def oim_loss(feature, label: int, bank: MemoryBank) -> LossValueGrad:
    f = np.asarray(feature, dtype=np.float64)
    v = bank.vectors
    if f.ndim != 1 or f.shape[0] != v.shape[1]:
        raise ShapeMismatchError(f"feature shape {f.shape} vs bank {v.shape}")
    if not 0 <= label < v.shape[0]:
        raise BadLabelError(f"label {label} outside bank of {v.shape[0]} classes")
    scores = v @ f / bank.temperature
    logp = _log_softmax(scores)
    p = np.exp(logp)
    p[label] -= 1.0
    return LossValueGrad(-logp[label], {"feature": v.T @ p / bank.temperature})


def wrt_weights(batch_dist, labels: BatchLabels):
    """Softmax weights over each anchor's positives (on d) and negatives (on -d).

    Returns ``(w_pos, w_neg)``, both N x N and zero outside the respective sets.
    """
    d = np.asarray(batch_dist, dtype=np.float64)
    pos, neg = _pos_neg_masks(labels, d.shape)
    return _masked_softmax(d, pos), _masked_softmax(-d, neg)


def _pos_neg_masks(labels: BatchLabels, shape):
    ids = labels.person_ids
    n = len(ids)
    if shape != (n, n):
        raise ShapeMismatchError(f"batch_dist {shape} vs {n} labels")
    same = ids[:, None] == ids[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same
    if not pos.any(axis=1).all() or not neg.any(axis=1).all():
        bad = np.flatnonzero(~(pos.any(axis=1) & neg.any(axis=1)))
        raise DegenerateBatchError(f"anchors {bad.tolist()} lack a positive or a negative")
    return pos, neg


def _masked_softmax(z, mask):
    z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def weighted_regularized_triplet(batch_dist, labels: BatchLabels) -> LossValueGrad:
    """Margin-free triplet loss with softmax-weighted positives and negatives.

    Per anchor ``softplus(sum_j w_ij d_ij - sum_k w_ik d_ik)``, averaged over
    anchors. The weights are differentiated too, so the gradient is that of
    the full expression.
    """
    d = np.asarray(batch_dist, dtype=np.float64)
    w_pos, w_neg = wrt_weights(d, labels)
    n = d.shape[0]
    s_pos = (w_pos * d).sum(axis=1)
    s_neg = (w_neg * d).sum(axis=1)
    x = s_pos - s_neg
    value = softplus(x).mean()
    # d s_pos / d d_ij = w_ij (1 + d_ij - s_pos);  d s_neg / d d_ik = w_ik (1 - d_ik + s_neg)
    sig = sigmoid(x)[:, None] / n
    grad = sig * (w_pos * (1.0 + d - s_pos[:, None]) - w_neg * (1.0 - d + s_neg[:, None]))
    return LossValueGrad(value, {"batch_dist": grad})


def center_loss(features, labels: BatchLabels, centers) -> LossValueGrad:
    f = np.asarray(features, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if f.ndim != 2 or c.ndim != 2 or f.shape[1] != c.shape[1]:
        raise ShapeMismatchError(f"features {f.shape} vs centers {c.shape}")
    if f.shape[0] != len(labels) or c.shape[0] != labels.n_classes:
        raise ShapeMismatchError("label count or class count does not match")
    n = f.shape[0]
    diff = f - c[labels.person_ids]
    value = 0.5 * (diff * diff).sum() / n
    g_centers = np.zeros_like(c)
    np.add.at(g_centers, labels.person_ids, -diff / n)
    return LossValueGrad(value, {"features": diff / n, "centers": g_centers})


def total_loss(
    id_loss: LossValueGrad,
    center: LossValueGrad,
    wrt: LossValueGrad,
    beta1: float = 0.0005,
    beta2: float = 1.0,
) -> LossValueGrad:
    """``L_id + beta1 * L_center + beta2 * L_wrt``; gradients on shared names are summed."""
    grads: dict = {}
    for weight, part in ((1.0, id_loss), (beta1, center), (beta2, wrt)):
        for name, g in part.grads.items():
            scaled = weight * np.asarray(g, dtype=np.float64)
            grads[name] = grads[name] + scaled if name in grads else scaled
    return LossValueGrad(id_loss.value + beta1 * center.value + beta2 * wrt.value, grads)
