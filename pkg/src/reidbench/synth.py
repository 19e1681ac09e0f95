"""Synthetic labelled embedding sets: identity centres + camera shift + noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedio import EmbeddingSet
from .errors import BadParamsError
from .sampling import make_rng


@dataclass(frozen=True)
class SynthConfig:
    n_ids: int = 10
    per_id_per_cam: int = 5
    n_cams: int = 2
    dim: int = 16
    center_scale: float = 1.0
    noise_sigma: float = 0.1
    cam_offset_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_ids", "per_id_per_cam", "n_cams", "dim"):
            if getattr(self, name) < 1:
                raise BadParamsError(f"{name} must be >= 1")
        for name in ("center_scale", "noise_sigma", "cam_offset_sigma"):
            if getattr(self, name) < 0:
                raise BadParamsError(f"{name} must be >= 0")


def generate(config: SynthConfig, name: str = "synth") -> EmbeddingSet:
    """Rows are ordered identity-major, then camera, then instance."""
    rng = make_rng(config.seed)
    centers = rng.normal(0.0, config.center_scale, (config.n_ids, config.dim))
    cam_shift = rng.normal(0.0, config.cam_offset_sigma, (config.n_cams, config.dim))
    pids = np.repeat(np.arange(config.n_ids), config.n_cams * config.per_id_per_cam)
    cams = np.tile(np.repeat(np.arange(config.n_cams), config.per_id_per_cam), config.n_ids)
    noise = rng.normal(0.0, config.noise_sigma, (len(pids), config.dim))
    feats = centers[pids] + cam_shift[cams] + noise
    return EmbeddingSet(feats.astype(np.float32), pids, cams, name)


def split_query_gallery(emb: EmbeddingSet, per_id: int = 1, seed: int = 0):
    """Move ``per_id`` random rows of every identity into a query set."""
    rng = make_rng(seed)
    query_rows = []
    for pid in np.unique(emb.person_ids):
        rows = np.flatnonzero(emb.person_ids == pid)
        query_rows.extend(rng.choice(rows, size=min(per_id, len(rows)), replace=False).tolist())
    query_rows = np.sort(np.array(query_rows, dtype=np.int64))
    mask = np.ones(emb.n, dtype=bool)
    mask[query_rows] = False
    return (
        emb.subset(query_rows, name=f"{emb.name}-query"),
        emb.subset(np.flatnonzero(mask), name=f"{emb.name}-gallery"),
    )
