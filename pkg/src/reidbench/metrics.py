"""CMC, AP/mAP and INP/mINP over ranked galleries.

INP for a query is ``|G| / R_hard`` where ``|G|`` is the number of valid
correct matches and ``R_hard`` the 1-based rank of the worst-ranked one.
AP is ``(1/|G|) * sum_k k / r_k`` over the ranks ``r_k`` of the correct
matches. Sums are taken with :func:`math.fsum` so the result does not
depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distances import DEFAULT_BLOCK, GalleryCache, map_blocks, resolve_threads
from .errors import AllQueriesSkippedError, DimMismatchError, UsageError

PROTOCOLS = ("cross_camera", "none")
MAX_CMC_RANK = 100
SUMMARY_RANKS = (1, 5, 10, 20)


@dataclass
class QueryEval:
    query_index: int
    num_valid_matches: int
    first_match_rank: int | None = None
    hardest_match_rank: int | None = None
    ap: float | None = None
    inp: float | None = None
    skipped: bool = False

    @property
    def np_penalty(self) -> float | None:
        """Negative penalty ``(R_hard - |G|) / R_hard``."""
        if self.skipped:
            return None
        return (self.hardest_match_rank - self.num_valid_matches) / self.hardest_match_rank

    def to_dict(self) -> dict:
        return {
            "query_index": self.query_index,
            "num_valid_matches": self.num_valid_matches,
            "first_match_rank": self.first_match_rank,
            "hardest_match_rank": self.hardest_match_rank,
            "ap": self.ap,
            "inp": self.inp,
            "skipped": self.skipped,
        }


@dataclass
class EvalReport:
    cmc: np.ndarray
    map: float
    minp: float
    n_evaluated: int
    n_skipped: int
    per_query: list = field(default_factory=list)

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def to_dict(self, per_query: bool = False) -> dict:
        doc = {
            "cmc": [float(v) for v in self.cmc],
            "map": self.map,
            "minp": self.minp,
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
        }
        if per_query:
            doc["per_query"] = [q.to_dict() for q in self.per_query]
        return doc


def rank_gallery(dist_row, valid_mask) -> np.ndarray:
    """Valid gallery indices by ascending distance, ties by ascending index."""
    dist_row = np.asarray(dist_row, dtype=np.float64)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if dist_row.shape != valid_mask.shape:
        raise DimMismatchError(f"distance row {dist_row.shape} vs mask {valid_mask.shape}")
    idx = np.flatnonzero(valid_mask)
    return idx[np.argsort(dist_row[idx], kind="stable")]


def _from_match_ranks(ranks: np.ndarray, query_index: int) -> QueryEval:
    m = int(ranks.size)
    if m == 0:
        return QueryEval(query_index, 0, skipped=True)
    precisions = np.arange(1, m + 1, dtype=np.float64) / ranks.astype(np.float64)
    hardest = int(ranks[-1])
    return QueryEval(
        query_index=query_index,
        num_valid_matches=m,
        first_match_rank=int(ranks[0]),
        hardest_match_rank=hardest,
        ap=math.fsum(precisions) / m,
        inp=m / hardest,
    )


def query_eval(ranked, match_mask, query_index: int = 0) -> QueryEval:
    """Evaluate one query from its ranked gallery list and a per-gallery match mask."""
    ranked = np.asarray(ranked, dtype=np.int64)
    match_mask = np.asarray(match_mask, dtype=bool)
    ranks = np.flatnonzero(match_mask[ranked]) + 1
    return _from_match_ranks(ranks, query_index)


# above these sizes a full stable sort of the row is cheaper than threshold counting
_COUNT_MAX_MATCHES = 64
_COUNT_MAX_GROUP = 4096


def _ranks_by_counting(row: np.ndarray, group: np.ndarray, is_match: np.ndarray) -> np.ndarray:
    """1-based match ranks when the valid non-matches are exactly the rows outside ``group``.

    ``group`` (sorted gallery indices) holds every match and every filtered
    row. For each match, the valid non-matches ranked ahead of it are
    counted directly: ``row < d`` over the full row minus the same count
    inside ``group``, plus exact ties with a lower gallery index.
    """
    matches = group[is_match]
    m = matches.size
    if m == 0:
        return matches
    md = row[matches]
    order = np.argsort(md, kind="stable")
    md, matches = md[order], matches[order]
    gd = row[group]
    ahead = np.empty(m, dtype=np.int64)
    for s in range(m):
        d = md[s]
        lt = np.count_nonzero(row < d)
        le = np.count_nonzero(row <= d)
        in_lt = np.count_nonzero(gd < d)
        in_eq = np.count_nonzero(gd == d)
        ahead[s] = lt - in_lt
        if le - lt > in_eq:
            j = matches[s]
            ahead[s] += np.count_nonzero(row[:j] == d) - np.count_nonzero((gd == d) & (group < j))
    return np.arange(1, m + 1) + ahead


def _ranks_by_sorting(row: np.ndarray, valid: np.ndarray, match: np.ndarray) -> np.ndarray:
    return np.flatnonzero(match[rank_gallery(row, valid)]) + 1


def match_ranks(dist_row, valid, match) -> np.ndarray:
    """1-based ranks of the correct matches among the valid gallery entries.

    Equal to ``flatnonzero(match[rank_gallery(dist_row, valid)]) + 1``.
    """
    dist_row = np.asarray(dist_row, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    match = np.asarray(match, dtype=bool) & valid
    group = np.flatnonzero(~valid | match)
    if np.count_nonzero(match) > _COUNT_MAX_MATCHES or group.size > _COUNT_MAX_GROUP:
        return _ranks_by_sorting(dist_row, valid, match)
    return _ranks_by_counting(dist_row, group, match[group])


class _GalleryIndex:
    """Gallery rows grouped by identity, so each query touches only its own id's rows."""

    def __init__(self, pids: np.ndarray, cams: np.ndarray):
        self.pids = pids
        self.cams = cams
        order = np.argsort(pids, kind="stable")
        uniq, starts = np.unique(pids[order], return_index=True)
        bounds = np.append(starts, len(order))
        self.groups = {
            int(u): np.sort(order[bounds[i] : bounds[i + 1]]) for i, u in enumerate(uniq)
        }
        self._empty = np.empty(0, dtype=np.int64)

    def ranks(self, row: np.ndarray, q_pid: int, q_cam: int, protocol: str) -> np.ndarray:
        group = self.groups.get(int(q_pid), self._empty)
        if protocol == "cross_camera":
            is_match = self.cams[group] != q_cam
        else:
            is_match = np.ones(group.size, dtype=bool)
        if np.count_nonzero(is_match) > _COUNT_MAX_MATCHES or group.size > _COUNT_MAX_GROUP:
            valid, match = _filter_masks(q_pid, q_cam, self.pids, self.cams, protocol)
            return _ranks_by_sorting(row, valid, match)
        return _ranks_by_counting(row, group, is_match)


def _filter_masks(q_pid, q_cam, g_pids, g_cams, protocol):
    same_id = g_pids == q_pid
    if protocol == "cross_camera":
        valid = ~(same_id & (g_cams == q_cam))
    else:
        valid = np.ones_like(same_id)
    return valid, same_id & valid


def _check_protocol(protocol):
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")


def _eval_rows(values, q_pids, q_cams, index: _GalleryIndex, protocol, offset):
    return [
        _from_match_ranks(index.ranks(values[r], q_pids[r], q_cams[r], protocol), offset + r)
        for r in range(values.shape[0])
    ]


def aggregate(per_query: list, n_gallery: int, max_rank: int | None = None) -> EvalReport:
    evaluated = [q for q in per_query if not q.skipped]
    n_eval = len(evaluated)
    if n_eval == 0:
        raise AllQueriesSkippedError(
            f"all {len(per_query)} queries have no valid match after filtering"
        )
    length = min(n_gallery, MAX_CMC_RANK) if max_rank is None else max_rank
    length = max(length, 1)
    firsts = np.array([q.first_match_rank for q in evaluated], dtype=np.int64)
    hist = np.bincount(np.minimum(firsts, length + 1), minlength=length + 2)
    cmc = np.cumsum(hist[1 : length + 1]) / n_eval
    return EvalReport(
        cmc=cmc,
        map=math.fsum(q.ap for q in evaluated) / n_eval,
        minp=math.fsum(q.inp for q in evaluated) / n_eval,
        n_evaluated=n_eval,
        n_skipped=len(per_query) - n_eval,
        per_query=per_query,
    )


def evaluate(
    dist,
    protocol: str = "cross_camera",
    max_rank: int | None = None,
    threads: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> EvalReport:
    """Evaluate a :class:`DistanceMatrix` under the given filtering protocol."""
    _check_protocol(protocol)
    values = np.asarray(dist.values, dtype=np.float64)
    q, g = values.shape
    if len(dist.query_pids) != q or len(dist.gallery_pids) != g:
        raise DimMismatchError("distance matrix metadata does not match its shape")

    index = _GalleryIndex(np.asarray(dist.gallery_pids), np.asarray(dist.gallery_cams))

    def run(a, b):
        return _eval_rows(values[a:b], dist.query_pids[a:b], dist.query_cams[a:b], index, protocol, a)

    blocks = map_blocks(run, q, block_size, resolve_threads(threads))
    return aggregate([e for blk in blocks for e in blk], g, max_rank)


def evaluate_embeddings(
    query,
    gallery,
    metric: str = "euclidean",
    protocol: str = "cross_camera",
    max_rank: int | None = None,
    threads: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> EvalReport:
    """Distance plus evaluation, one query block at a time.

    Peak memory is about ``block_size x G`` doubles per worker, so the full
    Q x G matrix is never held.
    """
    _check_protocol(protocol)
    if query.dim != gallery.dim:
        raise DimMismatchError(f"query dim {query.dim} != gallery dim {gallery.dim}")
    cache = GalleryCache(gallery.as_float64(), metric)
    qf = query.features
    index = _GalleryIndex(gallery.person_ids, gallery.cam_ids)

    def run(a, b):
        values = cache.block(qf[a:b])
        if query is gallery:
            values[np.arange(b - a), np.arange(a, b)] = 0.0
        return _eval_rows(values, query.person_ids[a:b], query.cam_ids[a:b], index, protocol, a)

    blocks = map_blocks(run, query.n, block_size, resolve_threads(threads))
    return aggregate([e for blk in blocks for e in blk], gallery.n, max_rank)
