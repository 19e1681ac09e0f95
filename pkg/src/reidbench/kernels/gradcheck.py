"""Central finite-difference verification of every kernel's analytic gradient."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import NonLocalParams, nonlocal_backward, nonlocal_block
from .losses import (
    BatchLabels,
    MemoryBank,
    center_loss,
    contrastive_loss,
    identity_loss,
    oim_loss,
    total_loss,
    triplet_loss,
    verification_loss,
    weighted_regularized_triplet,
)
from .pooling import GemParams, gem_pool

STEP = 1e-5
REL_TOL = 1e-4
GRAD_FLOOR = 1e-8
# entries with |analytic| <= GRAD_FLOOR are only required to be small in absolute terms
ABS_TOL = 1e-6
# central differences at h=1e-5 carry ~1e-11 absolute noise, so a 1e-4 relative
# check cannot resolve entries just above GRAD_FLOOR; such instances are redrawn
RESOLVABLE = 1e-6


def numerical_grad(fn, inputs: dict, name: str, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``fn(**inputs)`` w.r.t. ``inputs[name]``."""
    base = np.array(inputs[name], dtype=np.float64)
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    for i in range(base.size):
        bumped = base.copy().reshape(-1)
        bumped[i] += h
        hi = fn(**{**inputs, name: bumped.reshape(base.shape)})
        bumped[i] -= 2 * h
        lo = fn(**{**inputs, name: bumped.reshape(base.shape)})
        flat[i] = (hi - lo) / (2 * h)
    return grad


def compare(analytic, numeric) -> tuple[float, bool]:
    """Max relative error over entries with |analytic| > 1e-8, plus an abs check elsewhere."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    big = np.abs(analytic) > GRAD_FLOOR
    rel = np.abs(analytic[big] - numeric[big]) / np.abs(analytic[big])
    max_rel = float(rel.max()) if rel.size else 0.0
    small_ok = bool((np.abs(numeric[~big]) <= ABS_TOL).all())
    return max_rel, small_ok and max_rel < REL_TOL


# Each case draws one random instance and returns (scalar_fn, inputs, analytic_grads).
# Instances keep hinge arguments away from their kinks by more than the FD step.


def _case_identity(rng):
    n, c = rng.integers(2, 7), rng.integers(2, 9)
    labels = BatchLabels(rng.integers(0, c, n), int(c))
    eps = float(rng.uniform(0.0, 0.3))
    logits = rng.normal(0.0, 2.0, (n, c))
    fn = lambda logits: identity_loss(logits, labels, eps).value
    return fn, {"logits": logits}, identity_loss(logits, labels, eps).grads


def _away_from(values, kink, gap=1e-3):
    return np.where(np.abs(values - kink) < gap, values + 2 * gap, values)


def _case_contrastive(rng):
    margin = float(rng.uniform(0.5, 2.0))
    d = _away_from(rng.uniform(0.0, 2.5, 6), margin)
    same = rng.random(6) < 0.5
    fn = lambda d: contrastive_loss(d, same, margin).value
    return fn, {"d": d}, contrastive_loss(d, same, margin).grads


def _case_verification(rng):
    p = rng.uniform(0.05, 0.95, 6)
    same = rng.random(6) < 0.5
    fn = lambda p_pos: verification_loss(p_pos, same).value
    return fn, {"p_pos": p}, verification_loss(p, same).grads


def _case_triplet(rng):
    margin = float(rng.uniform(0.1, 0.5))
    d_pos = rng.uniform(0.0, 2.0, 6)
    d_neg = rng.uniform(0.0, 2.0, 6)
    x = margin + d_pos - d_neg
    d_neg = np.where(np.abs(x) < 1e-3, d_neg + 5e-3, d_neg)
    fn = lambda d_pos, d_neg: triplet_loss(d_pos, d_neg, margin).value
    return fn, {"d_pos": d_pos, "d_neg": d_neg}, triplet_loss(d_pos, d_neg, margin).grads


def _case_oim(rng):
    c, dim = rng.integers(2, 11), rng.integers(2, 9)
    bank = MemoryBank(rng.normal(size=(c, dim)), float(rng.uniform(0.2, 1.0)))
    label = int(rng.integers(0, c))
    f = rng.normal(size=dim)
    fn = lambda feature: oim_loss(feature, label, bank).value
    return fn, {"feature": f}, oim_loss(f, label, bank).grads


def _random_batch_dist(rng, p, k, dim=4):
    ids = np.repeat(np.arange(p), k)
    feats = rng.normal(size=(p * k, dim))
    diff = feats[:, None, :] - feats[None, :, :]
    return np.sqrt((diff**2).sum(-1)), BatchLabels(ids, int(p))


def _case_wrt(rng):
    d, labels = _random_batch_dist(rng, int(rng.integers(2, 5)), int(rng.integers(2, 4)))
    fn = lambda batch_dist: weighted_regularized_triplet(batch_dist, labels).value
    return fn, {"batch_dist": d}, weighted_regularized_triplet(d, labels).grads


def _case_center(rng):
    n, c, dim = rng.integers(1, 7), rng.integers(1, 5), rng.integers(1, 6)
    labels = BatchLabels(rng.integers(0, c, n), int(c))
    feats = rng.normal(size=(n, dim))
    centers = rng.normal(size=(c, dim))
    fn = lambda features, centers: center_loss(features, labels, centers).value
    inputs = {"features": feats, "centers": centers}
    return fn, inputs, center_loss(feats, labels, centers).grads


def _case_total(rng):
    p, k, dim = int(rng.integers(2, 4)), 2, 3
    n = p * k
    labels = BatchLabels(np.repeat(np.arange(p), k), p)
    beta1, beta2 = float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.0, 2.0))
    logits = rng.normal(size=(n, p))
    feats = rng.normal(size=(n, dim))
    centers = rng.normal(size=(p, dim))
    d, _ = _random_batch_dist(rng, p, k)

    def parts(logits, features, centers, batch_dist):
        return total_loss(
            identity_loss(logits, labels, 0.1),
            center_loss(features, labels, centers),
            weighted_regularized_triplet(batch_dist, labels),
            beta1,
            beta2,
        )

    inputs = {"logits": logits, "features": feats, "centers": centers, "batch_dist": d}
    return (lambda **kw: parts(**kw).value), inputs, parts(**inputs).grads


def _case_gem(rng):
    k, m = int(rng.integers(1, 5)), int(rng.integers(1, 10))
    maps = rng.uniform(0.1, 2.0, (k, m))
    p = rng.uniform(1.0, 6.0, k)
    weights = rng.normal(size=k)

    def fn(maps, p):
        return float(weights @ gem_pool(maps, GemParams(p)).values)

    res = gem_pool(maps, GemParams(p))
    grads = {"maps": weights[:, None] * res.grad_maps, "p": weights * res.grad_p}
    return fn, {"maps": maps, "p": p}, grads


def _case_nonlocal(rng):
    n, c = int(rng.integers(1, 6)), int(rng.integers(2, 7))
    b = int(rng.integers(1, c + 1))
    params = NonLocalParams.init(c, b, rng)
    params.scale = rng.normal(size=c)
    params.shift = rng.normal(size=c)
    x = rng.normal(size=(n, c))
    upstream = rng.normal(size=(n, c))

    def fn(x, **weights):
        return float((upstream * nonlocal_block(x, NonLocalParams(**weights))).sum())

    inputs = {"x": x, **params.as_dict()}
    return fn, inputs, nonlocal_backward(x, params, upstream)


CASES = {
    "identity_loss": _case_identity,
    "contrastive_loss": _case_contrastive,
    "verification_loss": _case_verification,
    "triplet_loss": _case_triplet,
    "oim_loss": _case_oim,
    "weighted_regularized_triplet": _case_wrt,
    "center_loss": _case_center,
    "total_loss": _case_total,
    "gem_pool": _case_gem,
    "nonlocal_block": _case_nonlocal,
}


@dataclass
class KernelCheck:
    kernel: str
    instances: int
    max_rel_error: float
    passed: bool
    seconds: float

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "instances": self.instances,
            "max_rel_error": self.max_rel_error,
            "passed": self.passed,
            "seconds": self.seconds,
        }


def _unresolvable(grads: dict) -> bool:
    for g in grads.values():
        mag = np.abs(np.asarray(g, dtype=np.float64))
        if ((mag > GRAD_FLOOR) & (mag < RESOLVABLE)).any():
            return True
    return False


def _draw(name, rng, tries: int = 1000):
    for _ in range(tries):
        case = CASES[name](rng)
        if not _unresolvable(case[2]):
            return case
    raise RuntimeError(f"{name}: no well-conditioned instance in {tries} draws")


def check_kernel(name: str, instances: int = 100, seed: int = 0) -> KernelCheck:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    start = time.perf_counter()
    worst, ok = 0.0, True
    for _ in range(instances):
        fn, inputs, grads = _draw(name, rng)
        if set(grads) != set(inputs):
            raise AssertionError(f"{name}: gradient keys {sorted(grads)} != inputs {sorted(inputs)}")
        for key in inputs:
            err, passed = compare(grads[key], numerical_grad(fn, inputs, key))
            worst = max(worst, err)
            ok = ok and passed
    return KernelCheck(name, instances, worst, ok, time.perf_counter() - start)


def run_suite(instances: int = 100, seed: int = 0, kernels=None) -> list[KernelCheck]:
    return [check_kernel(name, instances, seed) for name in (kernels or CASES)]
