"""Deterministic JSON / CSV rendering of evaluation reports."""

from __future__ import annotations

import json
import math

import numpy as np

from .metrics import SUMMARY_RANKS, EvalReport


def _encode(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            raise ValueError(f"cannot serialise non-finite float {value}")
        return format(value, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{_encode(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(doc) -> str:
    """JSON with keys in insertion order and floats at 17 significant digits."""
    return _encode(doc) + "\n"


def report_json(report: EvalReport, per_query: bool = False, extra: dict | None = None) -> str:
    doc = report.to_dict(per_query=per_query)
    if extra:
        doc.update(extra)
    return dumps(doc)


CSV_HEADER = ["rank1", "rank5", "rank10", "rank20", "map", "minp", "n_evaluated", "n_skipped"]


def report_csv(report: EvalReport) -> str:
    """Header plus one summary row at full precision."""
    row = [format(report.rank(k), ".17g") for k in SUMMARY_RANKS]
    row += [format(report.map, ".17g"), format(report.minp, ".17g")]
    row += [str(report.n_evaluated), str(report.n_skipped)]
    return ",".join(CSV_HEADER) + "\n" + ",".join(row) + "\n"


def summary_table(report: EvalReport) -> str:
    """Human summary in percent, one decimal."""
    cells = [f"Rank-{k}: {100 * report.rank(k):.1f}" for k in SUMMARY_RANKS]
    cells += [f"mAP: {100 * report.map:.1f}", f"mINP: {100 * report.minp:.1f}"]
    return "  ".join(cells) + f"  ({report.n_evaluated} queries, {report.n_skipped} skipped)"
