"""Evaluation tooling: retrieval metrics, synthetic corpora, calibration.

Synthetic corpora stand in for photographic benchmark collections: descriptor
space is a mixture of Gaussian clusters, relevance is constructed by planting
near-duplicate images, and every query image is also a database image (so both
the exclude-the-query mAP protocol and the top-4 N-S protocol apply).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Corpus
from .index import HammingParams, IndexBundle, build_index, fit_hamming, signatures_for
from .retrieval import RankedResult
from .vocab import assign_words, train_vocabulary

GroundTruth = dict[int, set[int]]


def average_precision(
    ranked: RankedResult, relevant: set[int], query_id: int | None = None
) -> float:
    """AP with the query excluded from both the ranking and the relevant set.

    Relevant images that never appear in the ranking contribute zero.
    """
    rel = set(relevant)
    if query_id is not None:
        rel.discard(query_id)
    if not rel:
        raise ValueError("relevant set is empty (after excluding the query)")
    hits = 0
    precision_sum = 0.0
    rank = 0
    for img in ranked.image_ids:
        if query_id is not None and img == query_id:
            continue  # the query itself does not occupy a rank
        rank += 1
        if int(img) in rel:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(rel)


def ns_score(ranked: RankedResult, relevant: set[int]) -> float:
    """Count of relevant images in the top 4 (query kept in the ranking)."""
    if len(relevant) != 4:
        raise ValueError(f"N-S protocol needs exactly 4 relevant images, got {len(relevant)}")
    top = ranked.image_ids[:4]
    return float(sum(1 for img in top if int(img) in relevant))


def mean_average_precision(
    results: list[tuple[int, RankedResult]], gt: GroundTruth
) -> float:
    by_query = dict(results)
    aps = []
    for qid, rel in gt.items():
        if qid not in by_query:
            raise ValueError(f"results are missing query {qid}")
        aps.append(average_precision(by_query[qid], rel, query_id=qid))
    if not aps:
        raise ValueError("ground truth is empty")
    return float(np.mean(aps))


def mean_ns_score(results: list[tuple[int, RankedResult]], gt: GroundTruth) -> float:
    by_query = dict(results)
    scores = []
    for qid, rel in gt.items():
        if qid not in by_query:
            raise ValueError(f"results are missing query {qid}")
        scores.append(ns_score(by_query[qid], rel))
    if not scores:
        raise ValueError("ground truth is empty")
    return float(np.mean(scores))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic corpus with known relevance.

    The database holds, per query: the query image itself plus
    `duplicates_per_query` noisy copies (the relevant set), followed by
    `n_images` distractor images drawn from the cluster model. The training
    corpus is drawn independently from the same cluster model.
    """

    n_images: int  # distractor images in the database
    features_per_image: int
    dim: int
    n_clusters: int
    cluster_spread: float
    duplicates_per_query: int
    noise: float
    seed: int
    n_queries: int

    def __post_init__(self):
        for name in ("n_images", "features_per_image", "dim", "n_clusters",
                     "duplicates_per_query", "n_queries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.cluster_spread < 0 or self.noise < 0:
            raise ValueError("cluster_spread and noise must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> tuple[Corpus, Corpus, Corpus, GroundTruth]:
    """Deterministically generate (training, database, queries, ground truth)."""
    rng = np.random.default_rng(spec.seed)
    means = rng.normal(0.0, 1.0, size=(spec.n_clusters, spec.dim))

    def draw_images(count: int) -> list[np.ndarray]:
        cids = rng.integers(0, spec.n_clusters, size=(count, spec.features_per_image))
        pts = means[cids] + rng.normal(
            0.0, spec.cluster_spread, size=(count, spec.features_per_image, spec.dim)
        )
        return [p.astype(np.float32) for p in pts]

    query_descs = draw_images(spec.n_queries)
    duplicates = []
    for q in query_descs:
        for _ in range(spec.duplicates_per_query):
            dup = q + rng.normal(0.0, spec.noise, size=q.shape).astype(np.float32)
            duplicates.append(dup.astype(np.float32))
    distractors = draw_images(spec.n_images)

    db = Corpus.from_arrays(query_descs + duplicates + distractors)
    queries = Corpus.from_arrays(query_descs)  # ids 0..n_queries-1, same as in db

    gt: GroundTruth = {}
    for q in range(spec.n_queries):
        dup_ids = {
            spec.n_queries + q * spec.duplicates_per_query + j
            for j in range(spec.duplicates_per_query)
        }
        gt[q] = {q} | dup_ids

    n_train = min(1000, max(20, spec.n_images // 5))
    training = Corpus.from_arrays(draw_images(n_train))
    return training, db, queries, gt


@dataclass
class EvalSetup:
    """A fully built pipeline over one synthetic corpus."""

    training: Corpus
    db: Corpus
    queries: Corpus
    gt: GroundTruth
    vocabularies: list
    index: IndexBundle


def prepare_setup(
    spec: SyntheticSpec,
    vocab_size: int = 256,
    n_vocabs: int = 2,
    vocab_seed0: int = 1,
    max_iters: int = 10,
    hamming_bits: int | None = None,
    hamming_seed: int = 0,
) -> EvalSetup:
    """Generate a corpus, train vocabularies on its training split, build the index."""
    training, db, queries, gt = generate_synthetic(spec)
    vocabs = [
        train_vocabulary(training, vocab_size, vocab_seed0 + i, max_iters)
        for i in range(n_vocabs)
    ]
    hp: HammingParams | None = None
    if hamming_bits is not None:
        hp = fit_hamming(training, vocabs, hamming_bits, hamming_seed)
    index = build_index(db, vocabs, hp)
    return EvalSetup(training, db, queries, gt, vocabs, index)


# The corpus used to calibrate the shipped term-2 defaults and to run the
# stability/ordering benchmarks. The wide cluster spread turns descriptor
# space into a lumpy continuum, so two same-data/different-seed vocabularies
# tessellate it differently (overlap ratio mostly below 0.3, like large
# photographic corpora) and moderate duplicate noise keeps quantization
# imperfect, which is what multi-vocabulary merging is for.
STANDARD_BENCHMARK = SyntheticSpec(
    n_images=400,
    features_per_image=60,
    dim=16,
    n_clusters=64,
    cluster_spread=1.0,
    duplicates_per_query=3,
    noise=0.75,
    seed=7,
    n_queries=20,
)

# Vocabulary training settings paired with STANDARD_BENCHMARK.
BENCHMARK_VOCAB_SIZE = 256
BENCHMARK_VOCAB_SEEDS = (1, 2)
BENCHMARK_KMEANS_ITERS = 10


def clip_term2_line(a: float, b: float) -> tuple[float, float]:
    """Clip a fitted line into the valid probability-model range.

    The intercept is preserved where possible (it governs the dense low-ratio
    region of the fit); the slope is capped so the line never exceeds 1.
    """
    bw = min(max(b, 1e-6), 1.0)
    aw = min(max(a, 0.0), 1.0 - bw)
    while aw + bw > 1.0:  # float guard: keep a + b <= 1 exactly
        aw = float(np.nextafter(aw, 0.0))
    return aw, bw


def calibrate_term2(
    db: Corpus,
    queries: Corpus,
    gt: GroundTruth,
    index: IndexBundle,
    he_threshold: int,
    bins: int = 20,
) -> tuple[float, float, float]:
    """Fit the true-match linear model from ground-truth data.

    For every query feature, true matches are candidates within the Hamming
    threshold that belong to a ground-truth image; the fraction of them lying
    in the overlap of the two candidate sets is regressed (least squares,
    degree 1, over `bins` equal-width bin means) against the overlap
    cardinality ratio. Returns (slope, intercept, rms residual over bins).
    """
    if index.k != 2:
        raise ValueError("calibration requires exactly two vocabularies")
    if index.hamming is None:
        raise ValueError("calibration requires an index with signatures")
    f0, f1 = index.inverted_files

    r_vals: list[float] = []
    tm_ratio: list[float] = []
    for rec in queries.images:
        if rec.image_id not in gt or rec.n_features == 0:
            continue
        gt_imgs = np.array(sorted(gt[rec.image_id]), dtype=np.uint32)
        words = assign_words(rec.descriptors, index.vocabularies)
        sig0 = signatures_for(rec.descriptors, words[:, 0], index.hamming, 0)
        sig1 = signatures_for(rec.descriptors, words[:, 1], index.hamming, 1)
        for n in range(rec.n_features):
            lo0, hi0 = f0.word_slice(words[n, 0])
            lo1, hi1 = f1.word_slice(words[n, 1])
            a_keys = f0.keys[lo0:hi0]
            b_keys = f1.keys[lo1:hi1]
            if len(a_keys) + len(b_keys) == 0:
                continue
            if len(b_keys):
                pos = np.searchsorted(b_keys, a_keys)
                found = b_keys[np.minimum(pos, len(b_keys) - 1)] == a_keys
            else:
                pos = np.zeros(len(a_keys), dtype=np.int64)
                found = np.zeros(len(a_keys), dtype=bool)
            inter = int(found.sum())
            union = len(a_keys) + len(b_keys) - inter
            ok_a = np.bitwise_count(f0.signatures[lo0:hi0] ^ sig0[n]) < he_threshold
            ok_b = np.bitwise_count(f1.signatures[lo1:hi1] ^ sig1[n]) < he_threshold
            gt_a = np.isin(f0.image_ids[lo0:hi0], gt_imgs)
            gt_b = np.isin(f1.image_ids[lo1:hi1], gt_imgs)

            b_hit = np.zeros(len(b_keys), dtype=bool)
            if inter:
                b_hit[pos[found]] = True
                ok_pair = ok_a[found] | ok_b[pos[found]]
                tm_inter = int((gt_a[found] & ok_pair).sum())
            else:
                tm_inter = 0
            tm_a_only = int((~found & gt_a & ok_a).sum())
            tm_b_only = int((~b_hit & gt_b & ok_b).sum())
            tm_union = tm_inter + tm_a_only + tm_b_only
            if tm_union == 0:
                continue
            r_vals.append(inter / union)
            tm_ratio.append(tm_inter / tm_union)

    if not r_vals:
        raise ValueError(
            "no true matches found; calibrate on a larger corpus or raise the threshold"
        )
    r_arr = np.array(r_vals)
    y_arr = np.array(tm_ratio)
    bin_idx = np.minimum((r_arr * bins).astype(int), bins - 1)
    xs, ys = [], []
    for b in range(bins):
        sel = bin_idx == b
        if np.any(sel):
            xs.append(r_arr[sel].mean())
            ys.append(y_arr[sel].mean())
    if len(xs) < 2:
        raise ValueError("ratio samples occupy fewer than two bins; corpus too uniform")
    slope, intercept = np.polyfit(xs, ys, 1)
    residual = float(np.sqrt(np.mean((slope * np.array(xs) + intercept - np.array(ys)) ** 2)))
    return float(slope), float(intercept), residual


def ratio_histogram(
    db: Corpus,
    vocabularies: list,
    queries: Corpus,
    sizes: list[int],
    bins: int = 20,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Distribution of the overlap cardinality ratio per database size.

    For each size, the index is rebuilt over the first `size` database images
    and the full-intersection ratio |∩ all K| / |∪ all K| is histogrammed over
    all query features whose intersection is non-empty.
    """
    out: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for size in sizes:
        if not 1 <= size <= db.n_images:
            raise ValueError(f"subset size {size} out of range [1, {db.n_images}]")
        sub = Corpus(db.images[:size], db.dim)
        index = build_index(sub, vocabularies)
        files = index.inverted_files
        r_vals = []
        for rec in queries.images:
            if rec.n_features == 0:
                continue
            words = assign_words(rec.descriptors, vocabularies)
            for n in range(rec.n_features):
                slices = [f.word_keys(words[n, i]) for i, f in enumerate(files)]
                if index.k == 2:
                    a_keys, b_keys = slices
                    if len(a_keys) == 0 or len(b_keys) == 0:
                        continue
                    pos = np.searchsorted(b_keys, a_keys)
                    pos_c = np.minimum(pos, len(b_keys) - 1)
                    inter = int((b_keys[pos_c] == a_keys).sum())
                    union = len(a_keys) + len(b_keys) - inter
                else:
                    from .bayes import decompose

                    dec = decompose(slices)
                    full = (1 << index.k) - 1
                    inter = int(dec.inter_card[full])
                    union = int(dec.union_card[full])
                if inter > 0:
                    r_vals.append(inter / union)
        counts, edges = np.histogram(np.array(r_vals), bins=bins, range=(0.0, 1.0))
        out[size] = (counts, edges)
    return out


def histogram_mean(counts: np.ndarray, edges: np.ndarray) -> float:
    """Mean ratio implied by a histogram (bin centers weighted by counts)."""
    if counts.sum() == 0:
        return 0.0
    centers = (edges[:-1] + edges[1:]) / 2.0
    return float((centers * counts).sum() / counts.sum())


METRICS_COLUMNS = ["method", "k", "vocab_size", "metric", "value", "query_time_ms_mean"]


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    """Write evaluation rows; `rows` entries may omit trailing columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col, "") for col in METRICS_COLUMNS})


def write_histogram_csv(
    hists: dict[int, tuple[np.ndarray, np.ndarray]], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["db_size", "bin_low", "bin_high", "count"])
        for size in sorted(hists):
            counts, edges = hists[size]
            for i, cnt in enumerate(counts):
                writer.writerow([size, f"{edges[i]:g}", f"{edges[i + 1]:g}", int(cnt)])
