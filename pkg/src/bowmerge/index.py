"""Inverted-file construction over a database corpus, one file per vocabulary.

Each inverted file stores, per visual word, the database features quantized to
that word as a contiguous slice (CSR layout) of 64-bit feature keys sorted by
(image_id, feature_id). IDF weights, per-image score norms and the per-entry
repetition counts used by burstiness weighting are derived at build time.

Index file (little-endian):
  magic "BMIX" | u8 has_signatures | u32 K | u32 N |
  per inverted file: u32 vocab_size, then per word:
      u32 entry_count, entries as (u32 image_id, u32 feature_id[, u64 signature])
  then N float32 image_norms.

Signature thresholds are not part of the index format; they are written to a
"<index>.he" sidecar (magic "BMHE") so queries can re-derive query signatures.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Corpus, FeatureRef, FormatError, PostingEntry, Vocabulary
from .vocab import assign_words, nearest_centroids

INDEX_MAGIC = b"BMIX"
HAMMING_MAGIC = b"BMHE"

# Words with fewer training points than this inherit the global medians.
_MIN_WORD_POINTS = 4

_SIG_CHUNK = 65536


@dataclass(frozen=True)
class HammingParams:
    """Projection + per-word thresholds for binary signature computation.

    `thresholds` holds one (vocab_size, bits) float64 array per vocabulary;
    bit b of a signature is set iff projection row b of the descriptor exceeds
    the threshold of its visual word.
    """

    bits: int
    projection_seed: int
    projections: np.ndarray  # (bits, dim) float32
    thresholds: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not 1 <= self.bits <= 64:
            raise ValueError(f"bits must be in [1, 64], got {self.bits}")
        if not 0 <= self.projection_seed < 2**64:
            raise ValueError("projection_seed must fit in u64")
        if self.projections.shape[0] != self.bits:
            raise ValueError("projections must have one row per bit")
        for t in self.thresholds:
            if t.ndim != 2 or t.shape[1] != self.bits:
                raise ValueError("each thresholds array must be (vocab_size, bits)")


def make_projections(bits: int, dim: int, projection_seed: int) -> np.ndarray:
    rng = np.random.default_rng(projection_seed)
    return rng.standard_normal((bits, dim)).astype(np.float32)


def fit_hamming(
    training: Corpus,
    vocabularies: list[Vocabulary],
    bits: int = 64,
    projection_seed: int = 0,
) -> HammingParams:
    """Fit per-word signature thresholds from a training corpus.

    Thresholds are the per-bit medians of the projected training descriptors
    assigned to each word; words with fewer than 4 points fall back to the
    global medians, which keeps every word usable.
    """
    x, _, _ = training.stacked()
    if x.shape[0] == 0:
        raise ValueError("training corpus has no descriptors")
    projections = make_projections(bits, training.dim, projection_seed)
    projected = x @ projections.T  # (F, bits) float32
    global_med = np.median(projected, axis=0)

    thresholds = []
    for vocab in vocabularies:
        labels = nearest_centroids(x, vocab.centroids)
        order = np.argsort(labels, kind="stable")
        counts = np.bincount(labels, minlength=vocab.size)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        thr = np.tile(global_med, (vocab.size, 1))
        for w in range(vocab.size):
            if counts[w] >= _MIN_WORD_POINTS:
                thr[w] = np.median(projected[order[bounds[w] : bounds[w + 1]]], axis=0)
        thresholds.append(thr)
    return HammingParams(bits, projection_seed, projections, tuple(thresholds))


def _pack_bits(bit_matrix: np.ndarray) -> np.ndarray:
    """Pack a (n, bits) boolean matrix into uint64, bit b at position b."""
    shifts = np.arange(bit_matrix.shape[1], dtype=np.uint64)
    return (bit_matrix.astype(np.uint64) << shifts[None, :]).sum(axis=1, dtype=np.uint64)


def compute_signature(
    x: np.ndarray, word: int, params: HammingParams, vocab_index: int = 0
) -> int:
    """Binary signature of one descriptor under the thresholds of its word."""
    thr = params.thresholds[vocab_index]
    if not 0 <= word < thr.shape[0]:
        raise ValueError(f"no thresholds for word {word}")
    proj = params.projections @ np.asarray(x, dtype=np.float32)
    return int(_pack_bits((proj > thr[word])[None, :])[0])


def signatures_for(
    x: np.ndarray, words: np.ndarray, params: HammingParams, vocab_index: int
) -> np.ndarray:
    """Vectorized signatures for a batch of descriptors and their words."""
    thr = params.thresholds[vocab_index]
    out = np.empty(x.shape[0], dtype=np.uint64)
    for lo in range(0, x.shape[0], _SIG_CHUNK):
        hi = min(lo + _SIG_CHUNK, x.shape[0])
        proj = x[lo:hi] @ params.projections.T
        out[lo:hi] = _pack_bits(proj > thr[words[lo:hi]])
    return out


def hamming_distance(a: int, b: int, width_a: int = 64, width_b: int = 64) -> int:
    """Popcount of XOR between two equal-width bit strings."""
    if width_a != width_b:
        raise ValueError(f"signature width mismatch: {width_a} vs {width_b}")
    return (int(a) ^ int(b)).bit_count()


@dataclass
class InvertedFile:
    """Posting lists of one vocabulary in CSR layout, plus IDF weights."""

    vocabulary_id: int
    offsets: np.ndarray  # (size + 1,) int64
    keys: np.ndarray  # (F,) uint64, sorted within each word slice
    image_ids: np.ndarray  # (F,) int64; keys >> 32, kept at bincount's native dtype
    idf: np.ndarray  # (size,) float64
    signatures: np.ndarray | None = None  # (F,) uint64
    # entries with the same (word, image); used by burstiness weighting
    repeat_counts: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_entries(self) -> int:
        return len(self.keys)

    def word_slice(self, word: int) -> tuple[int, int]:
        return int(self.offsets[word]), int(self.offsets[word + 1])

    def word_keys(self, word: int) -> np.ndarray:
        lo, hi = self.word_slice(word)
        return self.keys[lo:hi]

    def entries(self, word: int) -> list[PostingEntry]:
        lo, hi = self.word_slice(word)
        sigs = self.signatures[lo:hi] if self.signatures is not None else None
        return [
            PostingEntry(
                FeatureRef.from_key(k), None if sigs is None else int(sigs[i])
            )
            for i, k in enumerate(self.keys[lo:hi])
        ]


@dataclass
class IndexBundle:
    """Everything needed to answer queries: K inverted files + vocabularies."""

    inverted_files: list[InvertedFile]
    vocabularies: list[Vocabulary]
    image_norms: np.ndarray  # (N,) float64
    n_images: int
    hamming: HammingParams | None = None
    # position in file 1 of each file-0 entry; drives the two-vocabulary
    # fast path (a word slice of file 1 is a contiguous position range)
    xref01: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.inverted_files)

    @property
    def total_features(self) -> int:
        return self.inverted_files[0].n_entries if self.inverted_files else 0


def _file_from_labels(
    vocab_id: int,
    labels: np.ndarray,
    size: int,
    keys: np.ndarray,
    image_ids: np.ndarray,
    n_images: int,
    signatures: np.ndarray | None,
) -> tuple[InvertedFile, np.ndarray, np.ndarray]:
    """Assemble one inverted file; also returns (order, per-image norm)."""
    order = np.argsort(labels, kind="stable")  # keys already ascending per word
    counts = np.bincount(labels, minlength=size)
    offsets = np.concatenate(([0], np.cumsum(counts, dtype=np.int64)))
    keys_sorted = keys[order]
    imgs_sorted = image_ids[order].astype(np.int64)
    n = len(keys_sorted)

    word_ids = np.repeat(np.arange(size, dtype=np.int64), counts)
    new_run = np.empty(n, dtype=bool)
    if n:
        new_run[0] = True
        np.not_equal(imgs_sorted[1:], imgs_sorted[:-1], out=new_run[1:])
        new_run[offsets[:-1][counts > 0]] = True  # word boundary always starts a run

    run_starts = np.flatnonzero(new_run)
    run_lens = np.diff(np.append(run_starts, n))
    run_word = word_ids[run_starts]
    run_img = imgs_sorted[run_starts]

    # IDF counts distinct images per word
    n_w = np.bincount(run_word, minlength=size)
    idf = np.where(n_w > 0, np.log(n_images / np.maximum(n_w, 1)), 0.0)

    repeat_counts = np.repeat(run_lens, run_lens).astype(np.int32)

    # L2 norm of the idf-weighted word histogram per image
    tfidf_sq = (run_lens * idf[run_word]) ** 2
    norm = np.sqrt(np.bincount(run_img, weights=tfidf_sq, minlength=n_images))

    inv = InvertedFile(
        vocabulary_id=vocab_id,
        offsets=offsets,
        keys=keys_sorted,
        image_ids=imgs_sorted,
        idf=idf,
        signatures=None if signatures is None else signatures[order],
        repeat_counts=repeat_counts,
    )
    return inv, order, norm


def build_index(
    db: Corpus,
    vocabularies: list[Vocabulary],
    hamming: HammingParams | None = None,
) -> IndexBundle:
    """Quantize every database feature into each vocabulary's inverted file."""
    if not vocabularies:
        raise ValueError("need at least one vocabulary")
    for v in vocabularies:
        if v.dim != db.dim:
            raise ValueError(f"vocabulary dim {v.dim} != corpus dim {db.dim}")
    if hamming is not None and len(hamming.thresholds) != len(vocabularies):
        raise ValueError("hamming thresholds must cover every vocabulary")

    x, image_ids, feature_ids = db.stacked()
    if x.shape[0] == 0:
        raise ValueError("database has no features")
    keys = (image_ids.astype(np.uint64) << np.uint64(32)) | feature_ids.astype(np.uint64)
    n_images = db.n_images

    files = []
    orders = []
    norm_sum = np.zeros(n_images, dtype=np.float64)
    for k, vocab in enumerate(vocabularies):
        labels = nearest_centroids(x, vocab.centroids)
        sigs = (
            signatures_for(x, labels, hamming, k) if hamming is not None else None
        )
        inv, order, norm = _file_from_labels(
            k, labels, vocab.size, keys, image_ids, n_images, sigs
        )
        files.append(inv)
        orders.append(order)
        norm_sum += norm

    image_norms = norm_sum / len(vocabularies)
    image_norms[image_norms == 0.0] = 1.0  # images scoring zero everywhere

    xref01 = None
    if len(vocabularies) == 2:
        inv1_pos = np.empty(len(keys), dtype=np.int64)
        inv1_pos[orders[1]] = np.arange(len(keys), dtype=np.int64)
        xref01 = inv1_pos[orders[0]]

    return IndexBundle(
        inverted_files=files,
        vocabularies=vocabularies,
        image_norms=image_norms,
        n_images=n_images,
        hamming=hamming,
        xref01=xref01,
    )


def _hamming_sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".he")


def save_index(bundle: IndexBundle, path: str | Path) -> None:
    has_sig = bundle.hamming is not None
    buf = bytearray()
    buf += INDEX_MAGIC
    buf += struct.pack("<BII", int(has_sig), bundle.k, bundle.n_images)
    for inv in bundle.inverted_files:
        buf += struct.pack("<I", inv.size)
        if has_sig:
            dt = np.dtype([("img", "<u4"), ("fid", "<u4"), ("sig", "<u8")])
        else:
            dt = np.dtype([("img", "<u4"), ("fid", "<u4")])
        rec = np.empty(inv.n_entries, dtype=dt)
        rec["img"] = inv.image_ids.astype(np.uint32)
        rec["fid"] = (inv.keys & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        if has_sig:
            rec["sig"] = inv.signatures
        raw = rec.tobytes()
        for w in range(inv.size):
            lo, hi = inv.word_slice(w)
            buf += struct.pack("<I", hi - lo)
            buf += raw[lo * dt.itemsize : hi * dt.itemsize]
    buf += bundle.image_norms.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(buf))

    if has_sig:
        hp = bundle.hamming
        side = bytearray()
        side += HAMMING_MAGIC
        side += struct.pack(
            "<IQII", hp.bits, hp.projection_seed, hp.projections.shape[1], len(hp.thresholds)
        )
        for thr in hp.thresholds:
            side += struct.pack("<I", thr.shape[0])
            side += thr.astype("<f8").tobytes()
        _hamming_sidecar(path).write_bytes(bytes(side))


def _load_hamming(path: Path, k: int) -> HammingParams:
    if not path.exists():
        raise FormatError(f"index has signatures but sidecar {path} is missing")
    data = path.read_bytes()
    if data[:4] != HAMMING_MAGIC:
        raise FormatError(f"bad magic: expected {HAMMING_MAGIC!r}", offset=0)
    bits, seed, dim, n_vocabs = struct.unpack_from("<IQII", data, 4)
    if n_vocabs != k:
        raise FormatError(f"sidecar covers {n_vocabs} vocabularies, index has {k}")
    off = 4 + 20
    thresholds = []
    for _ in range(n_vocabs):
        (size,) = struct.unpack_from("<I", data, off)
        off += 4
        need = size * bits * 8
        if off + need > len(data):
            raise FormatError("truncated thresholds", offset=off)
        thr = np.frombuffer(data, dtype="<f8", count=size * bits, offset=off)
        thresholds.append(thr.reshape(size, bits).astype(np.float64, copy=True))
        off += need
    return HammingParams(bits, seed, make_projections(bits, dim, seed), tuple(thresholds))


def load_index(path: str | Path, vocabularies: list[Vocabulary]) -> IndexBundle:
    """Read an index file back, validating it against the given vocabularies.

    IDF weights, repetition counts and the two-vocabulary cross reference are
    recomputed from the postings; image norms are read from the file.
    """
    data = Path(path).read_bytes()
    if data[:4] != INDEX_MAGIC:
        raise FormatError(f"bad magic: expected {INDEX_MAGIC!r}", offset=0)
    has_sig, k, n_images = struct.unpack_from("<BII", data, 4)
    if k != len(vocabularies):
        raise FormatError(f"index has {k} vocabularies, {len(vocabularies)} supplied")
    off = 13
    entry_size = 16 if has_sig else 8

    files = []
    sorted_keys_per_file = []
    for fi, vocab in enumerate(vocabularies):
        (size,) = struct.unpack_from("<I", data, off)
        off += 4
        if size != vocab.size:
            raise FormatError(
                f"file {fi}: vocabulary size {vocab.size} != stored size {size}"
            )
        counts = np.empty(size, dtype=np.int64)
        chunks = []
        for w in range(size):
            if off + 4 > len(data):
                raise FormatError(f"file {fi}: truncated at word {w}", offset=off)
            (cnt,) = struct.unpack_from("<I", data, off)
            off += 4
            counts[w] = cnt
            need = cnt * entry_size
            if off + need > len(data):
                raise FormatError(f"file {fi}: truncated entries in word {w}", offset=off)
            chunks.append(data[off : off + need])
            off += need
        dt = (
            np.dtype([("img", "<u4"), ("fid", "<u4"), ("sig", "<u8")])
            if has_sig
            else np.dtype([("img", "<u4"), ("fid", "<u4")])
        )
        rec = np.frombuffer(b"".join(chunks), dtype=dt)
        keys = (rec["img"].astype(np.uint64) << np.uint64(32)) | rec["fid"].astype(np.uint64)
        offsets = np.concatenate(([0], np.cumsum(counts)))

        # entries must be sorted strictly within every word slice
        interior = np.ones(len(keys), dtype=bool)
        interior[offsets[:-1][counts > 0]] = False
        if len(keys) > 1 and not np.all(keys[1:][interior[1:]] > keys[:-1][interior[1:]]):
            raise FormatError(f"file {fi}: posting list not sorted/duplicate-free")

        skeys = np.sort(keys)
        if len(skeys) > 1 and not np.all(skeys[1:] > skeys[:-1]):
            raise FormatError(f"file {fi}: a feature appears in more than one word")
        sorted_keys_per_file.append(skeys)

        labels = np.repeat(np.arange(size, dtype=np.int64), counts)
        inv, _, _ = _file_from_labels(
            fi,
            labels.astype(np.int32),
            size,
            keys,
            rec["img"].astype(np.uint32),
            n_images,
            rec["sig"].copy() if has_sig else None,
        )
        files.append(inv)

    for fi in range(1, k):
        if not np.array_equal(sorted_keys_per_file[fi], sorted_keys_per_file[0]):
            raise FormatError(f"file {fi} indexes a different feature set than file 0")

    need = n_images * 4
    if off + need > len(data):
        raise FormatError("truncated image norms", offset=off)
    norms = np.frombuffer(data, dtype="<f4", count=n_images, offset=off).astype(np.float64)
    off += need
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes", offset=off)

    hamming = _load_hamming(_hamming_sidecar(path), k) if has_sig else None

    xref01 = None
    if k == 2:
        k0, k1 = files[0].keys, files[1].keys
        order1 = np.argsort(k1)
        pos = np.searchsorted(k1[order1], k0)
        xref01 = order1[pos]

    return IndexBundle(
        inverted_files=files,
        vocabularies=vocabularies,
        image_norms=norms,
        n_images=n_images,
        hamming=hamming,
        xref01=xref01,
    )
