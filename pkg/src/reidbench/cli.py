"""Command-line entry point: ``reidbench <subcommand>``.

Exit codes: 0 success, 1 failed check (grad-check), 2 usage error,
10-14 embedding I/O, 20-21 distances, 30 evaluation, 40-44 parameters and
kernels, 50 sampling. See :mod:`reidbench.errors`.
"""

from __future__ import annotations

import argparse
import logging
import re
import resource
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .distances import DEFAULT_BLOCK, METRICS, GalleryCache, map_blocks, pairwise_distance, resolve_threads
from .embedio import EmbeddingSet, load_embedding_set, save_distance_matrix, save_embedding_set
from .errors import IoFailureError, ReidError, UsageError
from .kernels.gradcheck import CASES, run_suite
from .metrics import PROTOCOLS, evaluate, evaluate_embeddings
from .report import dumps, report_csv, report_json, summary_table
from .rerank import RerankParams, k_reciprocal_rerank
from .sampling import RAMPS, LrSchedule, lr_at, make_rng, sample_batch
from .synth import SynthConfig, generate, split_query_gallery

log = logging.getLogger("reidbench")


def _write(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def _add_rerank_flags(p):
    p.add_argument("--k1", type=int, default=20)
    p.add_argument("--k2", type=int, default=6)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3)


def _add_common_eval_flags(p):
    p.add_argument("--query", required=True, help="query embedding directory")
    p.add_argument("--gallery", required=True, help="gallery embedding directory")
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--protocol", choices=PROTOCOLS, default="cross_camera")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default: $REID_THREADS or all cores)")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK)


def _rerank_matrix(query, gallery, args):
    params = RerankParams(args.k1, args.k2, args.lam)
    dist = lambda a, b: pairwise_distance(a, b, args.metric, args.block_size, args.threads)  # noqa: E731
    return k_reciprocal_rerank(dist(query, gallery), dist(gallery, gallery), dist(query, query), params)


def _emit_report(report, args, extra=None):
    fmt = args.format
    text = report_json(report, per_query=args.per_query, extra=extra) if fmt == "json" else report_csv(report)
    _write(text, args.out)
    summary = summary_table(report)
    if args.out is None:
        print(summary, file=sys.stderr)
    else:
        print(summary)
    if args.figures:
        from .plotting import plot_ap_vs_inp, plot_cmc

        fig_dir = Path(args.figures)
        plot_cmc({"eval": report}, fig_dir / "cmc.png")
        plot_ap_vs_inp(report, fig_dir / "ap_vs_inp.png")
        log.info("figures written to %s", fig_dir)


def cmd_eval(args) -> int:
    query = load_embedding_set(args.query)
    gallery = load_embedding_set(args.gallery)
    extra = {"metric": args.metric, "protocol": args.protocol}
    if args.rerank:
        extra["rerank"] = {"k1": args.k1, "k2": args.k2, "lambda": args.lam}
    if args.rerank or args.dump_dist:
        if args.rerank:
            dm = _rerank_matrix(query, gallery, args)
        else:
            dm = pairwise_distance(query, gallery, args.metric, args.block_size, args.threads)
        if args.dump_dist:
            save_distance_matrix(dm, args.dump_dist)
        report = evaluate(dm, args.protocol, threads=args.threads, block_size=args.block_size)
    else:
        report = evaluate_embeddings(
            query, gallery, args.metric, args.protocol,
            threads=args.threads, block_size=args.block_size,
        )
    _emit_report(report, args, extra)
    return 0


def cmd_rerank(args) -> int:
    query = load_embedding_set(args.query)
    gallery = load_embedding_set(args.gallery)
    dm = _rerank_matrix(query, gallery, args)
    save_distance_matrix(dm, args.out)
    log.info("re-ranked %dx%d matrix written to %s", *dm.shape, args.out)
    return 0


def cmd_grad_check(args) -> int:
    start = time.perf_counter()
    results = run_suite(args.instances, args.seed, args.kernel or None)
    doc = {
        "step": 1e-5,
        "rel_tol": 1e-4,
        "instances": args.instances,
        "seed": args.seed,
        "kernels": [r.to_dict() for r in results],
        "passed": all(r.passed for r in results),
        "seconds": time.perf_counter() - start,
    }
    _write(dumps(doc), args.out)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.kernel:<30} max_rel_err={r.max_rel_error:.3e}", file=sys.stderr)
    return 0 if doc["passed"] else 1


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_ids=args.n_ids,
        per_id_per_cam=args.per_id_per_cam,
        n_cams=args.n_cams,
        dim=args.dim,
        center_scale=args.center_scale,
        noise_sigma=args.noise_sigma,
        cam_offset_sigma=args.cam_offset_sigma,
        seed=args.seed,
    )
    emb = generate(cfg, name=args.name)
    out = Path(args.out)
    if args.split:
        query, gallery = split_query_gallery(emb, args.split, args.seed)
        save_embedding_set(query, out / "query")
        save_embedding_set(gallery, out / "gallery")
        log.info("wrote %d query / %d gallery rows under %s", query.n, gallery.n, out)
    else:
        save_embedding_set(emb, out)
        log.info("wrote %d rows to %s", emb.n, out)
    return 0


_SIZE_RE = re.compile(r"^(\d+)x(\d+)$")


def parse_size(text: str) -> tuple[int, int]:
    m = _SIZE_RE.match(text.strip())
    if not m:
        raise UsageError(f"size must look like QxG, got {text!r}")
    q, g = int(m.group(1)), int(m.group(2))
    if q < 1 or g < 1:
        raise UsageError(f"sizes must be positive, got {text!r}")
    return q, g


def _random_set(rng, n, dim, n_ids, name):
    feats = rng.standard_normal((n, dim), dtype=np.float32)
    pids = rng.integers(0, n_ids, n)
    cams = rng.integers(0, 6, n)
    return EmbeddingSet(feats, pids, cams, name)


def cmd_bench(args) -> int:
    sizes = [parse_size(s) for s in args.sizes]
    if args.dim < 1:
        raise UsageError("dim must be >= 1")
    threads = resolve_threads(args.threads)
    rows = []
    for q, g in sizes:
        rng = make_rng(args.seed)
        n_ids = max(1, g // 20)
        t0 = time.perf_counter()
        query = _random_set(rng, q, args.dim, n_ids, "bench-query")
        gallery = _random_set(rng, g, args.dim, n_ids, "bench-gallery")
        t1 = time.perf_counter()
        if args.distance_only_stage:
            cache = GalleryCache(gallery.as_float64(), args.metric)
            map_blocks(lambda a, b: cache.block(query.features[a:b]).shape, q, args.block_size, threads)
        t2 = time.perf_counter()
        report = evaluate_embeddings(
            query, gallery, args.metric, "cross_camera", threads=threads, block_size=args.block_size
        )
        t3 = time.perf_counter()
        row = {
            "q": q,
            "g": g,
            "dim": args.dim,
            "threads": threads,
            "generate_ms": 1000 * (t1 - t0),
            "distance_eval_ms": 1000 * (t3 - t2),
            "map": report.map,
            "minp": report.minp,
        }
        if args.distance_only_stage:
            row["distance_ms"] = 1000 * (t2 - t1)
        rows.append(row)
        print(f"{q}x{g}: distance+eval {row['distance_eval_ms']:.0f} ms", file=sys.stderr)
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    _write(dumps({"runs": rows, "peak_rss_mb": peak_mb}), args.out)
    return 0


def cmd_schedule(args) -> int:
    sched = LrSchedule(ramp=args.lr_ramp)
    epochs = range(1, args.epochs + 1)
    doc = {"schedule": asdict(sched), "lr": [[t, lr_at(sched, t)] for t in epochs]}
    _write(dumps(doc), args.out)
    return 0


def cmd_sample(args) -> int:
    emb = load_embedding_set(args.input)
    batch = sample_batch(emb.person_ids, args.p, args.k, args.seed)
    doc = {
        "p": batch.p_identities,
        "k": batch.k_instances,
        "seed": batch.seed,
        "identities": batch.identities.tolist(),
        "indices": batch.indices.tolist(),
    }
    _write(dumps(doc), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reidbench", description="Re-ID retrieval evaluation and metric-learning kernels")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate query against gallery (CMC, mAP, mINP)")
    _add_common_eval_flags(p)
    p.add_argument("--rerank", action="store_true", help="apply k-reciprocal re-ranking first")
    _add_rerank_flags(p)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--per-query", action="store_true", help="include per-query diagnostics in JSON")
    p.add_argument("--figures", help="directory for CMC and AP-vs-INP figures")
    p.add_argument("--dump-dist", help="also write the evaluated distance matrix here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rerank", help="write a k-reciprocal re-ranked distance matrix")
    _add_common_eval_flags(p)
    _add_rerank_flags(p)
    p.add_argument("--out", required=True, help="output matrix directory")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("grad-check", help="finite-difference check of every kernel")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernel", action="append", choices=sorted(CASES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("synth", help="write a synthetic embedding set")
    p.add_argument("--out", required=True)
    p.add_argument("--n-ids", type=int, default=10)
    p.add_argument("--per-id-per-cam", type=int, default=5)
    p.add_argument("--n-cams", type=int, default=2)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--cam-offset-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="synth")
    p.add_argument("--split", type=int, default=0, metavar="N", help="write query/ and gallery/ with N query rows per id")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time distance + evaluation at synthetic sizes")
    p.add_argument("--sizes", nargs="+", default=["1000x5000"], metavar="QxG")
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--metric", choices=METRICS, default="euclidean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK)
    p.add_argument("--distance-only-stage", action="store_true", help="also time distances alone")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("schedule", help="print the warm-up learning-rate schedule")
    p.add_argument("--lr-ramp", choices=RAMPS, default="prose")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("sample", help="draw one identity-balanced P x K batch")
    p.add_argument("--input", required=True)
    p.add_argument("-p", type=int, default=16)
    p.add_argument("-k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ReidError as exc:
        print(f"reidbench {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
