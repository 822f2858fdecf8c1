"""Brute-force reference implementations used as oracles by the test suite.

Everything here favors obviousness over speed: python sets and dicts for the
set algebra, direct formula evaluation for distances and weights, and a
two-pass structure (materialize all subset cardinalities first, vote second).
"""

import math

import numpy as np


def nearest_centroid_python(x, centroids) -> int:
    """Pure-python nearest centroid scan, squared Euclidean, lowest-index ties."""
    best, best_d = 0, None
    for i in range(len(centroids)):
        d = 0.0
        for a, b in zip(x, centroids[i]):
            diff = float(a) - float(b)
            d += diff * diff
        if best_d is None or d < best_d:
            best, best_d = i, d
    return best


def nearest_centroid_direct(x, centroids) -> int:
    """Direct numpy formula (no pairwise-distance library), float64."""
    d = ((centroids.astype(np.float64) - np.asarray(x, dtype=np.float64)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def decompose_sets(lists):
    """Hash-set decomposition: per-key subset masks plus the subset lattice.

    Returns (masks: dict key->bitmask, members, inter, union) where the last
    three are lists indexed by subset bitmask.
    """
    sets = [set(int(v) for v in lst) for lst in lists]
    k = len(sets)
    masks = {}
    for i, s in enumerate(sets):
        for key in s:
            masks[key] = masks.get(key, 0) | (1 << i)
    members = [0] * (1 << k)
    for m in masks.values():
        members[m] += 1
    inter = [0] * (1 << k)
    union = [0] * (1 << k)
    for subset in range(1, 1 << k):
        chosen = [sets[i] for i in range(k) if subset >> i & 1]
        inter[subset] = len(set.intersection(*chosen))
        union[subset] = len(set.union(*chosen))
    return masks, members, inter, union


def weight_formula(inter, union, cfg) -> float:
    """The overlap weight evaluated directly from its defining formula."""
    if cfg.force_w1:
        return 1.0
    r = inter / union
    t2 = min(max(cfg.a * r + cfg.b, 1e-9), 1.0)
    return 1.0 / (1.0 + (r / t2) * math.log(cfg.n_images * cfg.c))


def score_query_two_pass(qdesc, index, kind, cfg, use_hamming=False, use_burstiness=False):
    """Two-pass scorer over hash-set algebra; mirrors the voting contract.

    Pass 1 materializes, per query feature, the K candidate sets and every
    subset cardinality; pass 2 walks the union again and votes. Returns the
    ranking as a list of (image_id, score) tuples.
    """
    files = index.inverted_files
    k = index.k
    scores: dict[int, float] = {}

    for x in np.asarray(qdesc, dtype=np.float32):
        words = [nearest_centroid_direct(x, v.centroids) for v in index.vocabularies]
        key_lists = [files[i].word_keys(words[i]) for i in range(k)]
        if use_hamming:
            from bowmerge.index import compute_signature

            sig_x = [compute_signature(x, words[i], index.hamming, i) for i in range(k)]
            sig_maps = []
            for i in range(k):
                lo, hi = files[i].word_slice(words[i])
                sig_maps.append(
                    {int(kk): int(ss) for kk, ss in zip(files[i].keys[lo:hi], files[i].signatures[lo:hi])}
                )
        if use_burstiness:
            burst_maps = []
            for i in range(k):
                lo, hi = files[i].word_slice(words[i])
                counts: dict[int, int] = {}
                for img in (int(kk) >> 32 for kk in files[i].keys[lo:hi]):
                    counts[img] = counts.get(img, 0) + 1
                burst_maps.append(counts)

        # pass 1: full subset decomposition
        masks, members, inter, union = decompose_sets(key_lists)
        idfsq = [float(files[i].idf[words[i]]) ** 2 for i in range(k)]

        # pass 2: vote for every candidate in the union
        for key, mask in masks.items():
            in_lists = [i for i in range(k) if mask >> i & 1]
            if use_hamming:
                passes = any(
                    bin(sig_maps[i][key] ^ sig_x[i]).count("1") < cfg.he_threshold
                    for i in in_lists
                )
                if not passes:
                    continue
            if kind == "b0":
                continue  # handled by score_query_b0 below
            if kind == "b2":
                if mask != (1 << k) - 1:
                    continue
                contribution = sum(idfsq) / k
            else:  # b1 or the merged scorer
                idf_part = sum(idfsq[i] for i in in_lists)
                if kind == "bayes" and len(in_lists) >= 2:
                    w = weight_formula(inter[mask], union[mask], cfg)
                else:
                    w = 1.0
                contribution = w * idf_part
                if use_burstiness and len(in_lists) == 1:
                    contribution /= math.sqrt(burst_maps[in_lists[0]][key >> 32])
            img = key >> 32
            scores[img] = scores.get(img, 0.0) + contribution

    ranked = [
        (img, total / float(index.image_norms[img]))
        for img, total in scores.items()
        if total != 0.0
    ]
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked


def score_query_b0(qdesc, index, vocab_index, cfg, use_hamming=False):
    """Single-vocabulary reference scorer."""
    inv = index.inverted_files[vocab_index]
    scores: dict[int, float] = {}
    for x in np.asarray(qdesc, dtype=np.float32):
        word = nearest_centroid_direct(x, index.vocabularies[vocab_index].centroids)
        lo, hi = inv.word_slice(word)
        idfsq = float(inv.idf[word]) ** 2
        if use_hamming:
            from bowmerge.index import compute_signature

            sig_x = compute_signature(x, word, index.hamming, vocab_index)
        for pos in range(lo, hi):
            if use_hamming:
                d = bin(int(inv.signatures[pos]) ^ sig_x).count("1")
                if d >= cfg.he_threshold:
                    continue
            img = int(inv.keys[pos]) >> 32
            scores[img] = scores.get(img, 0.0) + idfsq
    ranked = [
        (img, total / float(index.image_norms[img]))
        for img, total in scores.items()
        if total != 0.0
    ]
    ranked.sort(key=lambda t: (-t[1], t[0]))
    return ranked


def overlap_only_true_match_setup(seed=55):
    """Corpus where every true match provably lies in the candidate overlap.

    Vocabulary 0 has one cell per (far-apart) cluster, vocabulary 1 splits
    each cluster in two, and each query image draws its features from
    distinct clusters. Ground-truth images are exact copies, so their
    features land in the query feature's cell under both vocabularies, while
    distractor halves vary the overlap ratio.
    Returns (db, queries, gt, index with signatures).
    """
    from bowmerge import Corpus, Vocabulary, build_index, fit_hamming

    rng = np.random.default_rng(seed)
    dim, n_clusters = 8, 32
    centers = rng.normal(size=(n_clusters, dim)) * 40.0
    split = rng.normal(size=(n_clusters, dim))
    split /= np.linalg.norm(split, axis=1, keepdims=True)
    v0 = Vocabulary(centers.astype(np.float32), seed=0)
    v1 = Vocabulary(
        np.concatenate([centers + 3.0 * split, centers - 3.0 * split]).astype(np.float32),
        seed=1,
    )

    def image_of(clusters):
        pts = centers[clusters] + rng.normal(scale=2.0, size=(len(clusters), dim))
        return pts.astype(np.float32)

    n_queries, fpi, dups, n_distractors = 6, 12, 2, 60
    q_descs = [image_of(rng.choice(n_clusters, fpi, replace=False)) for _ in range(n_queries)]
    dup_descs = [q.copy() for q in q_descs for _ in range(dups)]
    dis_descs = [image_of(rng.integers(0, n_clusters, fpi)) for _ in range(n_distractors)]
    db = Corpus.from_arrays(q_descs + dup_descs + dis_descs)
    queries = Corpus.from_arrays(q_descs)
    gt = {q: {q} | {n_queries + q * dups + j for j in range(dups)} for q in range(n_queries)}
    training = Corpus.from_arrays(
        [image_of(rng.integers(0, n_clusters, fpi)) for _ in range(40)]
    )
    params = fit_hamming(training, [v0, v1], bits=64, projection_seed=3)
    index = build_index(db, [v0, v1], params)
    return db, queries, gt, index


def average_precision_direct(ranked_ids, relevant, query_id=None) -> float:
    """AP from first principles: mean of precision at each relevant rank."""
    rel = set(relevant)
    if query_id is not None:
        rel.discard(query_id)
    hits = 0
    total = 0.0
    rank = 0
    for img in ranked_ids:
        if query_id is not None and img == query_id:
            continue
        rank += 1
        if img in rel:
            hits += 1
            total += hits / rank
    return total / len(rel)
