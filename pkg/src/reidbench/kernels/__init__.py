"""Loss, pooling and attention kernels with analytic gradients."""

from .attention import NonLocalParams, nonlocal_backward, nonlocal_block
from .losses import (
    BatchLabels,
    LossValueGrad,
    MemoryBank,
    center_loss,
    contrastive_loss,
    identity_loss,
    oim_loss,
    smoothed_targets,
    softplus,
    total_loss,
    triplet_loss,
    verification_loss,
    weighted_regularized_triplet,
    wrt_weights,
)
from .pooling import GemParams, GemResult, gem_pool

__all__ = [
    "BatchLabels",
    "GemParams",
    "GemResult",
    "LossValueGrad",
    "MemoryBank",
    "NonLocalParams",
    "center_loss",
    "contrastive_loss",
    "gem_pool",
    "identity_loss",
    "nonlocal_backward",
    "nonlocal_block",
    "oim_loss",
    "smoothed_targets",
    "softplus",
    "total_loss",
    "triplet_loss",
    "verification_loss",
    "weighted_regularized_triplet",
    "wrt_weights",
]
