"""Figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_cmc(reports: dict, path, max_rank: int = 50):
    """CMC curves, one line per labelled report."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for label, rep in reports.items():
            cmc = np.asarray(rep.cmc)[:max_rank]
            ax.plot(np.arange(1, len(cmc) + 1), 100 * cmc, label=f"{label} (mAP {100 * rep.map:.1f})")
        ax.set_xlabel("rank k")
        ax.set_ylabel("CMC-k (%)")
        ax.set_ylim(0, 101)
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_ap_vs_inp(report, path):
    """Per-query AP against INP; points below the diagonal hide hard matches."""
    done = [q for q in report.per_query if not q.skipped]
    ap = np.array([q.ap for q in done])
    inp = np.array([q.inp for q in done])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.scatter(ap, inp, s=6, alpha=0.5)
        ax.plot([0, 1], [0, 1], color="0.5", lw=0.8, ls="--")
        ax.set_xlabel("AP")
        ax.set_ylabel("INP")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_title(f"mAP {100 * report.map:.1f}  mINP {100 * report.minp:.1f}")
        return _save(fig, path)


def plot_sweep(levels, maps, minps, path):
    """Mean mAP / mINP against a swept parameter."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(levels, 100 * np.asarray(maps), marker="o", label="mAP")
        ax.plot(levels, 100 * np.asarray(minps), marker="s", label="mINP")
        ax.set_xlabel("noise sigma / center scale")
        ax.set_ylabel("%")
        ax.grid(alpha=0.3)
        ax.legend()
        return _save(fig, path)
