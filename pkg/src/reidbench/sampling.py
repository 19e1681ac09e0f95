"""Identity-balanced P x K batches and the warm-up learning-rate schedule."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BadParamsError, NotEnoughIdentitiesError

RAMPS = ("prose", "formula")


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; the only RNG used across the package."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class BatchSpec:
    p_identities: int
    k_instances: int
    indices: np.ndarray
    identities: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return len(self.indices)


def sample_batch(person_ids, p: int = 16, k: int = 4, seed: int = 0, require_negatives: bool = True) -> BatchSpec:
    """Draw ``p`` distinct identities uniformly, then ``k`` rows of each.

    Rows are drawn without replacement when an identity has at least ``k``
    of them and with replacement otherwise. ``indices`` is grouped by
    identity in draw order.
    """
    if p < 1 or k < 1:
        raise BadParamsError(f"p and k must be >= 1, got p={p}, k={k}")
    if require_negatives and p < 2:
        raise NotEnoughIdentitiesError("a batch with negatives needs p >= 2 identities")
    person_ids = np.asarray(person_ids, dtype=np.int64)
    uniq, inverse = np.unique(person_ids, return_inverse=True)
    if len(uniq) < p:
        raise NotEnoughIdentitiesError(f"requested {p} identities, only {len(uniq)} available")
    rng = make_rng(seed)
    chosen = np.sort(rng.choice(len(uniq), size=p, replace=False))
    rng.shuffle(chosen)
    indices = []
    for c in chosen:
        rows = np.flatnonzero(inverse == c)
        indices.append(rng.choice(rows, size=k, replace=len(rows) < k))
    return BatchSpec(p, k, np.concatenate(indices), uniq[chosen], int(seed))


@dataclass
class LrSchedule:
    base_lr: float = 3.5e-4
    warmup_epochs: int = 10
    milestones: list = field(default_factory=lambda: [40, 70])
    decay: float = 0.1
    ramp: str = "prose"

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise BadParamsError("milestones must be strictly increasing")
        if not 0.0 < self.decay < 1.0:
            raise BadParamsError("decay must lie in (0, 1)")
        if self.ramp not in RAMPS:
            raise BadParamsError(f"ramp must be one of {RAMPS}")
        if self.warmup_epochs < 0 or self.base_lr <= 0:
            raise BadParamsError("warmup_epochs must be >= 0 and base_lr positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LrSchedule":
        return cls(**json.loads(text))


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    """Learning rate for 1-based ``epoch``.

    During warm-up the ``prose`` ramp is ``base * t / warmup`` (rising from
    base/10 at t=1 to base at t=warmup); the ``formula`` ramp is
    ``(base * decay) * t / warmup``, which ends at base/10.
    """
    if epoch < 1:
        raise BadParamsError("epoch must be >= 1")
    if epoch <= schedule.warmup_epochs:
        start = schedule.base_lr if schedule.ramp == "prose" else schedule.base_lr / (1.0 / schedule.decay)
        return start * epoch / schedule.warmup_epochs
    # dividing by 1/decay keeps 3.5e-4 -> 3.5e-5 -> 3.5e-6 exact in binary64
    passed = sum(epoch > m for m in schedule.milestones)
    return schedule.base_lr / (1.0 / schedule.decay) ** passed
