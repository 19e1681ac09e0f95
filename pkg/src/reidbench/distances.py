"""Pairwise query-to-gallery distances, computed in float64 over query blocks."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DimMismatchError, UsageError, ZeroVectorError

METRICS = ("euclidean", "euclidean_sq", "cosine")
DEFAULT_BLOCK = 512

# entries below this (relative) level are recomputed directly to avoid
# cancellation in the ||a||^2 + ||b||^2 - 2ab expansion
_REFINE_REL = 1e-8


@dataclass(eq=False)
class DistanceMatrix:
    values: np.ndarray
    metric: str
    query_pids: np.ndarray
    query_cams: np.ndarray
    gallery_pids: np.ndarray
    gallery_cams: np.ndarray

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values: np.ndarray, metric: str | None = None) -> "DistanceMatrix":
        return DistanceMatrix(
            values,
            self.metric if metric is None else metric,
            self.query_pids,
            self.query_cams,
            self.gallery_pids,
            self.gallery_cams,
        )


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("REID_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise UsageError(f"REID_THREADS must be an integer, got {env!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise UsageError(f"thread count must be >= 1, got {threads}")
    return threads


class GalleryCache:
    """Float64 gallery features plus the per-row quantities every block needs."""

    def __init__(self, gallery: np.ndarray, metric: str):
        if metric not in METRICS:
            raise UsageError(f"unknown metric {metric!r}; choose from {METRICS}")
        self.metric = metric
        self.features = np.ascontiguousarray(gallery, dtype=np.float64)
        self.sq_norms = np.einsum("ij,ij->i", self.features, self.features)
        if metric == "cosine":
            norms = np.sqrt(self.sq_norms)
            if (norms == 0).any():
                raise ZeroVectorError(f"gallery row {int(np.argmin(norms))} is all zeros")
            self.unit = self.features / norms[:, None]

    def block(self, query: np.ndarray) -> np.ndarray:
        """Distances from the float64 query rows ``query`` to every gallery row."""
        query = np.ascontiguousarray(query, dtype=np.float64)
        if self.metric == "cosine":
            qn = np.sqrt(np.einsum("ij,ij->i", query, query))
            if (qn == 0).any():
                raise ZeroVectorError(f"query row {int(np.argmin(qn))} is all zeros")
            qu = query / qn[:, None]
            out = 1.0 - qu @ self.unit.T
            np.clip(out, 0.0, 2.0, out=out)
            rows, cols = np.nonzero(out < _REFINE_REL)
            if rows.size:
                diff = qu[rows] - self.unit[cols]
                out[rows, cols] = 0.5 * np.einsum("ij,ij->i", diff, diff)
            return out

        q_sq = np.einsum("ij,ij->i", query, query)
        out = query @ self.features.T
        out *= -2.0
        out += q_sq[:, None]
        out += self.sq_norms[None, :]
        np.maximum(out, 0.0, out=out)
        # scalar bound first (a superset), exact per-entry bound on the survivors
        rows, cols = np.nonzero(out <= _REFINE_REL * (q_sq.max() + self.sq_norms.max()))
        keep = out[rows, cols] <= _REFINE_REL * (q_sq[rows] + self.sq_norms[cols])
        rows, cols = rows[keep], cols[keep]
        if rows.size:
            diff = query[rows] - self.features[cols]
            out[rows, cols] = np.einsum("ij,ij->i", diff, diff)
        if self.metric == "euclidean":
            np.sqrt(out, out=out)
        return out


def iter_blocks(n: int, block_size: int):
    for start in range(0, n, block_size):
        yield start, min(start + block_size, n)


def map_blocks(fn, n: int, block_size: int, threads: int):
    """Apply ``fn(start, stop)`` over row blocks, returning results in block order.

    BLAS is pinned to one thread so each block is computed identically no
    matter how many workers run.
    """
    spans = list(iter_blocks(n, block_size))
    with threadpool_limits(limits=1, user_api="blas"):
        if threads == 1 or len(spans) == 1:
            return [fn(a, b) for a, b in spans]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda ab: fn(*ab), spans))


def pairwise_distance(
    query,
    gallery,
    metric: str = "euclidean",
    block_size: int = DEFAULT_BLOCK,
    threads: int | None = None,
) -> DistanceMatrix:
    """Full Q x G distance matrix between two :class:`EmbeddingSet` objects.

    ``euclidean_sq`` is ``||a||^2 + ||b||^2 - 2 a.b`` clamped at zero,
    ``euclidean`` its square root and ``cosine`` is ``1 - cos(a, b)``.
    """
    if query.dim != gallery.dim:
        raise DimMismatchError(f"query dim {query.dim} != gallery dim {gallery.dim}")
    if block_size < 1:
        raise UsageError("block_size must be >= 1")
    threads = resolve_threads(threads)
    cache = GalleryCache(gallery.as_float64(), metric)
    qf = query.as_float64()
    values = np.empty((query.n, gallery.n), dtype=np.float64)

    def fill(a, b):
        values[a:b] = cache.block(qf[a:b])

    map_blocks(fill, query.n, block_size, threads)
    if query is gallery:
        np.fill_diagonal(values, 0.0)
    return DistanceMatrix(
        values, metric, query.person_ids, query.cam_ids, gallery.person_ids, gallery.cam_ids
    )
