"""Command-line driver: gen, train, index, query, eval, calibrate, ratio-hist.

Every subcommand validates its inputs up front, writes the corresponding
artifact format, and exits 0 on success or 1 with a one-line diagnostic.
All randomness flows from explicit --seed flags.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .bayes import MergeConfig
from .core import (
    read_descriptors,
    read_ground_truth,
    read_vocabulary,
    write_descriptors,
    write_ground_truth,
    write_vocabulary,
)
from .evaluation import (
    SyntheticSpec,
    calibrate_term2,
    generate_synthetic,
    mean_average_precision,
    mean_ns_score,
    ratio_histogram,
    write_histogram_csv,
    write_metrics_csv,
)
from .index import build_index, fit_hamming, load_index, save_index
from .retrieval import (
    RankedResult,
    ScoringMethod,
    read_results,
    score_queries,
    write_results,
)
from .vocab import train_vocabulary


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"missing input file: {p}")


def _check_k(flag_k: int | None, n_vocabs: int) -> None:
    if flag_k is not None and flag_k != n_vocabs:
        raise ValueError(f"--k {flag_k} does not match {n_vocabs} --vocab arguments")


def cmd_gen(args) -> int:
    spec = SyntheticSpec(
        n_images=args.images,
        features_per_image=args.features,
        dim=args.dim,
        n_clusters=args.clusters,
        cluster_spread=args.spread,
        duplicates_per_query=args.dups,
        noise=args.noise,
        seed=args.seed,
        n_queries=args.queries,
    )
    training, db, queries, gt = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_descriptors(training, out / "training.desc")
    write_descriptors(db, out / "db.desc")
    write_descriptors(queries, out / "queries.desc")
    write_ground_truth(gt, out / "groundtruth.txt")
    print(
        f"wrote {out}/training.desc ({training.n_images} images), "
        f"db.desc ({db.n_images}), queries.desc ({queries.n_images}), groundtruth.txt"
    )
    return 0


def cmd_train(args) -> int:
    _require_files(args.training)
    corpus = read_descriptors(args.training)
    vocab = train_vocabulary(corpus, args.size, args.seed, args.iters)
    write_vocabulary(vocab, args.out)
    print(f"trained vocabulary of {vocab.size} words (seed {args.seed}) -> {args.out}")
    return 0


def cmd_index(args) -> int:
    _require_files(args.db, *args.vocab, args.he_train)
    _check_k(args.k, len(args.vocab))
    db = read_descriptors(args.db)
    vocabs = [read_vocabulary(p) for p in args.vocab]
    hamming = None
    if args.he:
        he_train = read_descriptors(args.he_train) if args.he_train else db
        hamming = fit_hamming(he_train, vocabs, args.he_bits, args.he_seed)
    bundle = build_index(db, vocabs, hamming)
    save_index(bundle, args.out)
    sig = " + signatures" if args.he else ""
    print(
        f"indexed {bundle.total_features} features of {bundle.n_images} images "
        f"into {bundle.k} inverted files{sig} -> {args.out}"
    )
    return 0


def _merge_config(args, n_images: int) -> MergeConfig:
    if args.config:
        cfg = MergeConfig.from_file(args.config, n_images=n_images)
    else:
        cfg = MergeConfig(n_images=n_images)
    overrides = {}
    if args.c is not None:
        overrides["c"] = args.c
    if args.term2_a is not None:
        overrides["a"] = args.term2_a
    if args.term2_b is not None:
        overrides["b"] = args.term2_b
    if args.he_thresh is not None:
        overrides["he_threshold"] = args.he_thresh
    if getattr(args, "force_w1", False):
        overrides["force_w1"] = True
    return replace(cfg, **overrides) if overrides else cfg


def cmd_query(args) -> int:
    _require_files(args.index, args.queries, *args.vocab, args.config)
    _check_k(args.k, len(args.vocab))
    vocabs = [read_vocabulary(p) for p in args.vocab]
    index = load_index(args.index, vocabs)
    queries = read_descriptors(args.queries)
    if queries.dim != index.vocabularies[0].dim:
        raise ValueError(
            f"query dim {queries.dim} does not match index dim {index.vocabularies[0].dim}"
        )
    cfg = _merge_config(args, index.n_images)
    method = ScoringMethod(
        kind=args.method,
        b0_vocab=args.b0_vocab,
        use_hamming=args.he,
        use_burstiness=args.burst,
    )
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    t0 = time.perf_counter()
    results = score_queries(queries, index, method, cfg, threads=threads)
    elapsed = time.perf_counter() - t0
    write_results(results, args.out, topk=args.topk)
    print(
        f"{len(results)} queries with method={args.method} in {elapsed:.2f}s "
        f"({len(results) / elapsed:.1f} q/s) -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    _require_files(args.results, args.gt)
    raw = read_results(args.results)
    gt = read_ground_truth(args.gt)
    for qid in sorted(gt):
        if qid not in raw:
            raise ValueError(f"results file is missing query {qid} present in ground truth")
    results = []
    for qid, pairs in raw.items():
        ids = [p[0] for p in pairs]
        scores = [p[1] for p in pairs]
        results.append((qid, RankedResult(ids, scores)))
    if args.protocol == "map":
        value = mean_average_precision(results, gt)
        metric = "mAP"
    else:
        value = mean_ns_score(results, gt)
        metric = "NS"
    print(f"{metric}={value:.6f} over {len(gt)} queries")
    if args.out:
        row = {
            "method": args.method_label,
            "k": args.k if args.k is not None else "",
            "vocab_size": args.vocab_size if args.vocab_size is not None else "",
            "metric": metric,
            "value": repr(value),
            "query_time_ms_mean": args.query_time_ms if args.query_time_ms is not None else "",
        }
        write_metrics_csv([row], args.out)
        print(f"metrics -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    _require_files(args.db, args.queries, args.gt, args.index, *args.vocab)
    if len(args.vocab) != 2:
        raise ValueError("calibration requires exactly two --vocab arguments")
    vocabs = [read_vocabulary(p) for p in args.vocab]
    index = load_index(args.index, vocabs)
    db = read_descriptors(args.db)
    queries = read_descriptors(args.queries)
    gt = read_ground_truth(args.gt)
    a, b, rms = calibrate_term2(db, queries, gt, index, args.he_thresh)
    from .evaluation import clip_term2_line

    a_w, b_w = clip_term2_line(a, b)
    cfg = MergeConfig(
        n_images=index.n_images, a=a_w, b=b_w, he_threshold=args.he_thresh
    )
    header = (
        f"term-2 line calibrated from {args.db} / {args.gt}\n"
        f"raw fit: a={a!r} b={b!r} rms_residual={rms!r}\n"
        f"stored values clipped into the valid range where needed"
    )
    cfg.to_file(args.out, header=header)
    print(f"calibrated a={a:.4f} b={b:.4f} (rms {rms:.4f}) -> {args.out}")
    return 0


def cmd_ratio_hist(args) -> int:
    _require_files(args.db, args.queries, *args.vocab)
    _check_k(args.k, len(args.vocab))
    db = read_descriptors(args.db)
    vocabs = [read_vocabulary(p) for p in args.vocab]
    queries = read_descriptors(args.queries)
    sizes = [int(tok) for tok in args.sizes.split(",") if tok]
    if not sizes:
        raise ValueError("--sizes must list at least one database size")
    hists = ratio_histogram(db, vocabs, queries, sizes, bins=args.bins)
    write_histogram_csv(hists, args.out)
    from .evaluation import histogram_mean

    for size in sorted(hists):
        counts, edges = hists[size]
        print(f"db_size={size}: {int(counts.sum())} ratios, mean r={histogram_mean(counts, edges):.4f}")
    print(f"histograms -> {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bowmerge",
        description="Multi-vocabulary bag-of-visual-words retrieval experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus with ground truth")
    p.add_argument("--images", type=int, required=True, help="distractor image count")
    p.add_argument("--features", type=int, default=60)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--spread", type=float, default=0.25)
    p.add_argument("--dups", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.12)
    p.add_argument("--queries", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one vocabulary by k-means")
    p.add_argument("--training", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=12)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("index", help="build inverted files over a database")
    p.add_argument("--db", required=True)
    p.add_argument("--vocab", action="append", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--he", action="store_true", help="attach binary signatures")
    p.add_argument("--he-bits", type=int, default=64)
    p.add_argument("--he-seed", type=int, default=0)
    p.add_argument("--he-train", default=None, help="corpus for thresholds (default: db)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="rank database images for each query")
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", action="append", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--queries", required=True)
    p.add_argument("--method", choices=["b0", "b1", "b2", "bayes", "ra"], default="bayes")
    p.add_argument("--b0-vocab", type=int, default=0)
    p.add_argument("--config", default=None, help="merge config file")
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--term2-a", type=float, default=None)
    p.add_argument("--term2-b", type=float, default=None)
    p.add_argument("--force-w1", action="store_true")
    p.add_argument("--he", action="store_true")
    p.add_argument("--he-thresh", type=int, default=None)
    p.add_argument("--burst", action="store_true")
    p.add_argument("--topk", type=int, default=100)
    p.add_argument("--threads", type=int, default=0, help="0 = all cores")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score a results file against ground truth")
    p.add_argument("--results", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--protocol", choices=["map", "ns"], default="map")
    p.add_argument("--out", default=None, help="metrics CSV")
    p.add_argument("--method-label", default="")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--query-time-ms", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="fit the term-2 line from ground truth")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--index", required=True, help="index with signatures, K=2")
    p.add_argument("--vocab", action="append", required=True)
    p.add_argument("--he-thresh", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ratio-hist", help="overlap ratio distribution vs database size")
    p.add_argument("--db", required=True)
    p.add_argument("--vocab", action="append", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--queries", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated database sizes")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ratio_hist)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line diagnostic contract
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
