"""Query-time scoring: matching functions, the merge engine, rank aggregation.

Per query feature, every candidate in the union of the K retrieved posting
lists votes once for its image. A candidate present in the k lists of subset S
contributes

    w_eff * sum_{k in S} idf_k^2        (mean of squared idf, times k * w)

where w_eff is the overlap weight for k >= 2 under merged scoring (identically
1 under plain concatenation), exactly 1 for difference-set candidates, and the
B2 variant keeps only full-intersection candidates. Scores accumulate per
image and are divided by the per-image norms of the index.

Two engine paths produce identical results: a two-vocabulary fast path that
exploits a precomputed cross-file position map (a word slice of the second
file is a contiguous position range, so overlap tests are two compares per
candidate and nothing is sorted at query time), and a general K-list path that
groups the concatenated lists with one stable sort per query feature. Both
traverse the union of the K lists once per query feature.

Results file: UTF-8 text, one line per query:
  "query_id: image_id score image_id score ..." (descending score).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .bayes import MergeConfig, _sorted_group_masks, bayes_weight
from .core import Corpus
from .index import IndexBundle, signatures_for
from .vocab import assign_words

METHOD_KINDS = ("b0", "b1", "b2", "bayes", "ra")


@dataclass(frozen=True)
class ScoringMethod:
    """Which matching function to score with, plus optional refinements."""

    kind: str
    b0_vocab: int = 0
    use_hamming: bool = False
    use_burstiness: bool = False

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method {self.kind!r}, expected one of {METHOD_KINDS}")
        if self.b0_vocab < 0:
            raise ValueError("b0_vocab must be non-negative")
        if self.use_burstiness and self.kind not in ("bayes", "b1"):
            raise ValueError("burstiness weighting requires the bayes or b1 method")


class RankedResult:
    """Images ordered by descending score; ties break by ascending image id."""

    def __init__(self, image_ids: np.ndarray, scores: np.ndarray):
        image_ids = np.asarray(image_ids, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        if image_ids.shape != scores.shape or image_ids.ndim != 1:
            raise ValueError("image_ids and scores must be parallel 1-D arrays")
        if scores.size and not np.isfinite(scores).all():
            raise ValueError("scores must be finite")
        if len(np.unique(image_ids)) != len(image_ids):
            raise ValueError("duplicate image ids in ranking")
        if scores.size > 1:
            d = np.diff(scores)
            if np.any(d > 0):
                raise ValueError("scores must be non-increasing")
            tied = d == 0
            if np.any(tied & (np.diff(image_ids) <= 0)):
                raise ValueError("tied scores must order by ascending image id")
        self.image_ids = image_ids
        self.scores = scores

    @classmethod
    def from_scores(cls, image_ids: np.ndarray, scores: np.ndarray) -> "RankedResult":
        """Sort (id, score) pairs into ranking order."""
        image_ids = np.asarray(image_ids, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((image_ids, -scores))
        return cls(image_ids[order], scores[order])

    @classmethod
    def _ordered_unchecked(cls, image_ids: np.ndarray, scores: np.ndarray) -> "RankedResult":
        # for internal callers whose output satisfies the invariants by construction
        obj = object.__new__(cls)
        obj.image_ids = image_ids
        obj.scores = scores
        return obj

    def __len__(self) -> int:
        return len(self.image_ids)

    def top(self, k: int) -> "RankedResult":
        return RankedResult(self.image_ids[:k], self.scores[:k])

    def items(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.image_ids, self.scores)]


def match_b0(x_word: int, y_word: int) -> int:
    """Kronecker delta on a single vocabulary."""
    return 1 if x_word == y_word else 0


def match_b1(x_words, y_words) -> int:
    """Number of vocabularies on which the two features share a word."""
    if len(x_words) != len(y_words):
        raise ValueError("word tuples must have equal length")
    return sum(match_b0(a, b) for a, b in zip(x_words, y_words))


def match_b2(x_words, y_words) -> int:
    """1 iff the features share their word in every vocabulary."""
    return 1 if match_b1(x_words, y_words) == len(x_words) else 0


def _concat_ranges(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenate [s, e) integer ranges into one index array."""
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    shift = starts - np.concatenate(([0], np.cumsum(lens)[:-1]))
    return np.repeat(shift, lens) + np.arange(total, dtype=np.int64)


@lru_cache(maxsize=None)
def _mask_tables(k: int) -> tuple[np.ndarray, np.ndarray]:
    """(2^k, k) bit membership matrix and per-mask popcount."""
    masks = np.arange(1 << k, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(k, dtype=np.uint32)) & 1).astype(np.float64)
    return bits, bits.sum(axis=1)


def _popcounts(values: np.ndarray) -> np.ndarray:
    return np.bitwise_count(values)


def _ranked_from_raw(raw: np.ndarray, norms: np.ndarray) -> RankedResult:
    nz = np.flatnonzero(raw)
    if len(nz) == 0:
        return RankedResult(np.empty(0, dtype=np.int64), np.empty(0))
    scores = raw[nz] / norms[nz]
    # nz is ascending, so a stable sort on -score breaks ties by ascending id
    order = np.argsort(-scores, kind="stable")
    return RankedResult._ordered_unchecked(nz[order], scores[order])


def _score_b0(
    qdesc: np.ndarray,
    index: IndexBundle,
    vocab_index: int,
    use_hamming: bool,
    he_threshold: int,
) -> np.ndarray:
    inv = index.inverted_files[vocab_index]
    words = assign_words(qdesc, [index.vocabularies[vocab_index]])[:, 0]
    starts = inv.offsets[words]
    ends = inv.offsets[words + 1]
    pos = _concat_ranges(starts, ends)
    lens = ends - starts
    contrib = np.repeat(inv.idf[words] ** 2, lens)
    imgs = inv.image_ids[pos]
    if use_hamming:
        sig_x = signatures_for(qdesc, words, index.hamming, vocab_index)
        ok = _popcounts(inv.signatures[pos] ^ np.repeat(sig_x, lens)) < he_threshold
        contrib = contrib[ok]
        imgs = imgs[ok]
    return np.bincount(imgs, weights=contrib, minlength=index.n_images)


def _concat_slices(arr: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenate arr[s:e] slices; cheaper than gathering by index."""
    return np.concatenate([arr[s:e] for s, e in zip(starts, ends)])


def _score_two_vocab(
    qdesc: np.ndarray,
    index: IndexBundle,
    kind: str,
    cfg: MergeConfig,
    use_hamming: bool,
    use_burstiness: bool,
) -> np.ndarray:
    """Fast path for K = 2 built on the file0 -> file1 position map.

    Every per-entry array of file 0 is contiguous per word, so the candidate
    slices are concatenated as views and the overlap test is two compares per
    entry against the word-slice bounds of file 1 (no sorting, no hashing).
    Overlap candidates vote once through the file-0 side; their file-1 twins
    are zeroed out by position before the file-1 difference votes accumulate.
    """
    f0, f1 = index.inverted_files
    words = assign_words(qdesc, index.vocabularies)
    w0, w1 = words[:, 0], words[:, 1]

    if use_hamming:
        sigx0 = signatures_for(qdesc, w0, index.hamming, 0)
        sigx1 = signatures_for(qdesc, w1, index.hamming, 1)

    s0, e0 = f0.offsets[w0], f0.offsets[w0 + 1]
    s1, e1 = f1.offsets[w1], f1.offsets[w1 + 1]
    lens0, lens1 = e0 - s0, e1 - s1
    alive = (lens0 + lens1) > 0
    if not np.any(alive):
        return np.zeros(index.n_images)
    w0, w1 = w0[alive], w1[alive]
    s0, e0, lens0 = s0[alive], e0[alive], lens0[alive]
    s1, e1, lens1 = s1[alive], e1[alive], lens1[alive]
    if use_hamming:
        sigx0, sigx1 = sigx0[alive], sigx1[alive]
    n_feat = len(w0)

    # overlap test: position of each file-0 entry in file 1, relative to the
    # query word's slice there; in [0, len) means the entry is in both lists
    rel = _concat_slices(index.xref01, s0, e0) - np.repeat(s1, lens0)
    imgs_a = _concat_slices(f0.image_ids, s0, e0)
    found = (rel >= 0) & (rel < np.repeat(lens1, lens0))
    fidx = np.flatnonzero(found)
    feat_of_a = np.repeat(np.arange(n_feat), lens0)
    feat_sel = feat_of_a[fidx]
    inter = np.bincount(feat_sel, minlength=n_feat)
    union = lens0 + lens1 - inter

    idfsq0, idfsq1 = f0.idf[w0] ** 2, f1.idf[w1] ** 2

    # positions of matched file-0 entries inside the concatenated file-1 slices
    cum1 = np.concatenate(([0], np.cumsum(lens1)[:-1]))
    cat_b_pos = rel[fidx] + cum1[feat_sel]

    if use_hamming:
        ok_a = _popcounts(_concat_slices(f0.signatures, s0, e0) ^ np.repeat(sigx0, lens0))
        ok_a = ok_a < cfg.he_threshold
        ok_b = _popcounts(_concat_slices(f1.signatures, s1, e1) ^ np.repeat(sigx1, lens1))
        ok_b = ok_b < cfg.he_threshold
        ok_a[fidx] |= ok_b[cat_b_pos]  # overlap entries pass via either word

    if kind == "b2":
        contrib_a = np.zeros(len(imgs_a))
        contrib_a[fidx] = ((idfsq0 + idfsq1) / 2.0)[feat_sel]
    else:
        if kind == "bayes":
            wgt = bayes_weight(inter, union, cfg)  # union >= 1 after the alive filter
        else:  # b1
            wgt = np.ones(n_feat)
        contrib_a = np.repeat(idfsq0, lens0)
        if use_burstiness:  # difference-set votes only; overlap votes overwritten below
            contrib_a /= np.sqrt(_concat_slices(f0.repeat_counts, s0, e0))
        contrib_a[fidx] = (wgt * (idfsq0 + idfsq1))[feat_sel]
    if use_hamming:
        contrib_a *= ok_a
    raw = np.bincount(imgs_a, weights=contrib_a, minlength=index.n_images)

    if kind != "b2":
        imgs_b = _concat_slices(f1.image_ids, s1, e1)
        contrib_b = np.repeat(idfsq1, lens1)
        if use_burstiness:
            contrib_b /= np.sqrt(_concat_slices(f1.repeat_counts, s1, e1))
        if use_hamming:
            contrib_b *= ok_b
        contrib_b[cat_b_pos] = 0.0  # overlap candidates already voted once above
        raw += np.bincount(imgs_b, weights=contrib_b, minlength=index.n_images)
    return raw


def _score_general(
    qdesc: np.ndarray,
    index: IndexBundle,
    kind: str,
    cfg: MergeConfig,
    use_hamming: bool,
    use_burstiness: bool,
) -> np.ndarray:
    """General K-list path: one stable sort of the union per query feature."""
    k = index.k
    files = index.inverted_files
    words = assign_words(qdesc, index.vocabularies)
    bits_mat, pops = _mask_tables(k)
    full_mask = (1 << k) - 1
    all_masks = np.arange(1 << k)

    if use_hamming:
        sig_x = [signatures_for(qdesc, words[:, i], index.hamming, i) for i in range(k)]

    img_chunks: list[np.ndarray] = []
    contrib_chunks: list[np.ndarray] = []
    for n in range(words.shape[0]):
        key_parts, bit_parts, ok_parts, rep_parts = [], [], [], []
        idfsq = np.empty(k)
        for i in range(k):
            w = words[n, i]
            lo, hi = files[i].word_slice(w)
            idfsq[i] = files[i].idf[w] ** 2
            if hi == lo:
                continue
            key_parts.append(files[i].keys[lo:hi])
            bit_parts.append(np.full(hi - lo, 1 << i, dtype=np.uint32))
            if use_hamming:
                ok_parts.append(
                    _popcounts(files[i].signatures[lo:hi] ^ sig_x[i][n]) < cfg.he_threshold
                )
            if use_burstiness:
                rep_parts.append(files[i].repeat_counts[lo:hi])
        if not key_parts:
            continue

        cat_keys = np.concatenate(key_parts)
        cat_bits = np.concatenate(bit_parts)
        order, group_starts, uniq_keys, masks = _sorted_group_masks(cat_keys, cat_bits)

        members = np.bincount(masks, minlength=1 << k).astype(np.int64)
        inter = np.zeros(1 << k, dtype=np.int64)
        union = np.zeros(1 << k, dtype=np.int64)
        for s in range(1, 1 << k):
            inter[s] = members[(all_masks & s) == s].sum()
            union[s] = members[(all_masks & s) != 0].sum()

        # per-subset effective weight: 1 for difference-set members and for
        # plain concatenation; the overlap weight only for k >= 2 subsets
        w_eff = np.ones(1 << k)
        if kind == "bayes":
            multi = (pops >= 2) & (union > 0)
            w_eff[multi] = bayes_weight(inter[multi], union[multi], cfg)

        idfsq_sum = bits_mat @ idfsq
        if kind == "b2":
            lookup = np.zeros(1 << k)
            lookup[full_mask] = idfsq_sum[full_mask] / k
        else:
            lookup = w_eff * idfsq_sum

        contrib = lookup[masks]
        if use_burstiness:
            cat_rep = np.concatenate(rep_parts)[order]
            single = pops[masks] == 1
            scale = np.ones(len(masks))
            scale[single] = 1.0 / np.sqrt(cat_rep[group_starts[single]])
            contrib = contrib * scale
        if use_hamming:
            cat_ok = np.concatenate(ok_parts)[order]
            contrib = contrib * np.logical_or.reduceat(cat_ok, group_starts)

        img_chunks.append((uniq_keys >> np.uint64(32)).astype(np.int64))
        contrib_chunks.append(contrib)

    if not img_chunks:
        return np.zeros(index.n_images)
    return np.bincount(
        np.concatenate(img_chunks),
        weights=np.concatenate(contrib_chunks),
        minlength=index.n_images,
    )


def score_query(
    query_descriptors: np.ndarray,
    index: IndexBundle,
    method: ScoringMethod,
    cfg: MergeConfig | None = None,
) -> RankedResult:
    """Rank database images for one query image's descriptors."""
    qdesc = np.ascontiguousarray(query_descriptors, dtype=np.float32)
    if qdesc.ndim != 2 or qdesc.shape[1] != index.vocabularies[0].dim:
        raise ValueError(
            f"query descriptors must be (n, {index.vocabularies[0].dim}), got {qdesc.shape}"
        )
    if cfg is None:
        cfg = MergeConfig(n_images=index.n_images)
    if method.use_hamming and index.hamming is None:
        raise ValueError("hamming matching requested but the index has no signatures")
    if method.kind in ("b0", "ra") and method.b0_vocab >= index.k:
        raise ValueError(f"b0_vocab {method.b0_vocab} out of range for K={index.k}")
    if method.kind in ("b1", "b2", "bayes") and index.k < 2:
        raise ValueError(f"method {method.kind} needs K >= 2 vocabularies")
    if qdesc.shape[0] == 0:
        return RankedResult(np.empty(0, dtype=np.int64), np.empty(0))

    if method.kind == "ra":
        per_vocab = [
            _ranked_from_raw(
                _score_b0(qdesc, index, i, method.use_hamming, cfg.he_threshold),
                index.image_norms,
            )
            for i in range(index.k)
        ]
        return rank_aggregate(per_vocab)

    if method.kind == "b0":
        raw = _score_b0(qdesc, index, method.b0_vocab, method.use_hamming, cfg.he_threshold)
    elif index.k == 2 and index.xref01 is not None:
        raw = _score_two_vocab(
            qdesc, index, method.kind, cfg, method.use_hamming, method.use_burstiness
        )
    else:
        raw = _score_general(
            qdesc, index, method.kind, cfg, method.use_hamming, method.use_burstiness
        )
    return _ranked_from_raw(raw, index.image_norms)


def score_queries(
    queries: Corpus,
    index: IndexBundle,
    method: ScoringMethod,
    cfg: MergeConfig | None = None,
    threads: int = 1,
) -> list[tuple[int, RankedResult]]:
    """Score every query image; order follows the query corpus."""
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked = list(
                pool.map(
                    lambda rec: score_query(rec.descriptors, index, method, cfg),
                    queries.images,
                )
            )
        return [(rec.image_id, r) for rec, r in zip(queries.images, ranked)]
    return [
        (rec.image_id, score_query(rec.descriptors, index, method, cfg))
        for rec in queries.images
    ]


def rank_aggregate(per_vocab_results: list[RankedResult]) -> RankedResult:
    """Fuse rankings by ascending median rank (ties: mean rank, then id).

    Images missing from one ranking take rank = universe size + 1. Output
    scores encode the (median, mean) ordering so the ranking invariant holds.
    """
    if not per_vocab_results:
        raise ValueError("need at least one ranking to aggregate")
    universe = np.unique(np.concatenate([r.image_ids for r in per_vocab_results]))
    u = len(universe)
    if u == 0:
        return RankedResult(np.empty(0, dtype=np.int64), np.empty(0))
    ranks = np.full((len(per_vocab_results), u), u + 1, dtype=np.float64)
    for row, res in enumerate(per_vocab_results):
        pos = np.searchsorted(universe, res.image_ids)
        ranks[row, pos] = np.arange(1, len(res.image_ids) + 1)
    medians = np.median(ranks, axis=0)
    means = ranks.mean(axis=0)
    # median steps are >= 0.5 apart, so a mean term < 0.5 never reorders medians
    scores = -(medians + means / (2.0 * (u + 2)))
    order = np.lexsort((universe, means, medians))
    return RankedResult(universe[order], scores[order])


def write_results(
    results: list[tuple[int, RankedResult]], path: str | Path, topk: int | None = None
) -> None:
    lines = []
    for qid, ranked in results:
        shown = ranked if topk is None else ranked.top(topk)
        parts = [f"{img} {score!r}" for img, score in shown.items()]
        lines.append(f"{qid}: " + " ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results(path: str | Path) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'query_id: img score ...'")
        qid = int(head)
        toks = tail.split()
        if len(toks) % 2:
            raise ValueError(f"line {lineno}: odd number of tokens after query id")
        out[qid] = [(int(toks[i]), float(toks[i + 1])) for i in range(0, len(toks), 2)]
    return out
