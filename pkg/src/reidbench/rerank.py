"""k-reciprocal re-ranking with local query expansion and Jaccard distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadParamsError, DimMismatchError


@dataclass(frozen=True)
class RerankParams:
    k1: int = 20
    k2: int = 6
    lam: float = 0.3

    def __post_init__(self):
        if not (isinstance(self.k1, (int, np.integer)) and isinstance(self.k2, (int, np.integer))):
            raise BadParamsError("k1 and k2 must be integers")
        if not self.k1 >= self.k2 >= 1:
            raise BadParamsError(f"need k1 >= k2 >= 1, got k1={self.k1}, k2={self.k2}")
        if not 0.0 <= self.lam <= 1.0:
            raise BadParamsError(f"lambda must be in [0, 1], got {self.lam}")


def _reciprocal(initial_rank: np.ndarray, i: int, k: int) -> np.ndarray:
    forward = initial_rank[i, : k + 1]
    backward = initial_rank[forward, : k + 1]
    return forward[(backward == i).any(axis=1)]


def _row_normalize(dist: np.ndarray) -> np.ndarray:
    lo = dist.min(axis=1, keepdims=True)
    span = dist.max(axis=1, keepdims=True) - lo
    span[span == 0] = 1.0
    return (dist - lo) / span


def k_reciprocal_rerank(q_g, g_g, q_q, params: RerankParams = RerankParams()):
    """Re-rank a query-gallery :class:`DistanceMatrix`.

    Neighbourhoods are built over the joint probe set (queries followed by
    gallery). Each probe's k-reciprocal set is expanded with the half-size
    reciprocal sets of its members when they overlap by more than 2/3,
    encoded with Gaussian weights ``exp(-d)`` and averaged over the ``k2``
    nearest probes. The returned distance is
    ``lam * d_orig + (1 - lam) * d_jaccard`` where ``d_orig`` is the per-row
    min-max normalised input distance.
    """
    qg = np.asarray(q_g.values, dtype=np.float64)
    gg = np.asarray(g_g.values, dtype=np.float64)
    qq = np.asarray(q_q.values, dtype=np.float64)
    nq, ng = qg.shape
    if gg.shape != (ng, ng) or qq.shape != (nq, nq):
        raise DimMismatchError(
            f"inconsistent shapes: q_g {qg.shape}, g_g {gg.shape}, q_q {qq.shape}"
        )
    k1, k2, lam = int(params.k1), int(params.k2), float(params.lam)
    n_all = nq + ng

    full = np.block([[qq, qg], [qg.T, gg]])
    full = _row_normalize(full)
    initial_rank = np.argsort(full, axis=1, kind="stable")

    half = int(np.around(k1 / 2.0))
    weights = np.zeros((n_all, n_all), dtype=np.float64)
    for i in range(n_all):
        recip = _reciprocal(initial_rank, i, k1)
        expansion = [recip]
        for cand in recip:
            cand_recip = _reciprocal(initial_rank, cand, half)
            if len(np.intersect1d(cand_recip, recip)) > 2.0 / 3.0 * len(cand_recip):
                expansion.append(cand_recip)
        members = np.unique(np.concatenate(expansion))
        w = np.exp(-full[i, members])
        weights[i, members] = w / w.sum()

    if k2 > 1:
        weights = weights[initial_rank[:, :k2]].mean(axis=1)

    jaccard = np.empty((nq, ng), dtype=np.float64)
    gallery_w = weights[nq:]
    gallery_mass = gallery_w.sum(axis=1)
    for i in range(nq):
        nz = np.flatnonzero(weights[i])
        overlap = np.minimum(weights[i, nz][None, :], gallery_w[:, nz]).sum(axis=1)
        union = weights[i].sum() + gallery_mass - overlap
        jaccard[i] = 1.0 - overlap / union

    final = lam * full[:nq, nq:] + (1.0 - lam) * jaccard
    return q_g.with_values(final, metric="rerank")
