"""Core domain types and the binary/text file formats shared by all modules.

Descriptors are plain float32 numpy arrays; a corpus groups them per image.
All ids are unsigned 32-bit, all floats are little-endian IEEE-754 float32.

File formats (little-endian):

  Descriptor file:   magic "BMV1" | u32 dim | u32 image_count |
                     per image: u32 image_id, u32 feature_count,
                                feature_count * dim float32
  Vocabulary file:   magic "BMVC" | u32 dim | u32 size | u64 seed |
                     size * dim float32
  Ground-truth file: UTF-8 text, one line per query:
                     "query_image_id: relevant_id relevant_id ..."
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DESCRIPTOR_MAGIC = b"BMV1"
VOCABULARY_MAGIC = b"BMVC"

_U32 = struct.Struct("<I")
_U32x2 = struct.Struct("<II")


class FormatError(ValueError):
    """A file does not match its declared binary/text format."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class FeatureRef:
    """Identity of one local feature: (image_id, feature_id), unique per corpus."""

    image_id: int
    feature_id: int

    def key(self) -> int:
        """64-bit sort key; posting lists are ordered by this value."""
        return (self.image_id << 32) | self.feature_id

    @staticmethod
    def from_key(key: int) -> "FeatureRef":
        return FeatureRef(int(key) >> 32, int(key) & 0xFFFFFFFF)


@dataclass(frozen=True)
class PostingEntry:
    """One inverted-file entry: a feature plus its optional binary signature."""

    feature: FeatureRef
    signature: int | None = None


@dataclass(frozen=True)
class ImageRecord:
    """All descriptors of one image, as a (n_features, dim) float32 array."""

    image_id: int
    descriptors: np.ndarray

    @property
    def n_features(self) -> int:
        return self.descriptors.shape[0]


class Corpus:
    """An ordered set of images with dense ids 0..N-1 and fixed-dim descriptors.

    Immutable after construction; descriptor arrays are stored as float32 and
    must be finite. An image may have zero descriptors.
    """

    def __init__(self, images: list[ImageRecord], dim: int):
        if not images:
            raise ValueError("corpus must contain at least one image")
        if dim <= 0:
            raise ValueError(f"descriptor dim must be positive, got {dim}")
        for i, rec in enumerate(images):
            if rec.image_id != i:
                raise ValueError(
                    f"image ids must be dense 0..N-1; position {i} has id {rec.image_id}"
                )
            d = rec.descriptors
            if d.ndim != 2 or d.shape[1] != dim:
                raise ValueError(
                    f"image {rec.image_id}: descriptors must have shape (n, {dim}), got {d.shape}"
                )
            if d.dtype != np.float32:
                raise ValueError(f"image {rec.image_id}: descriptors must be float32")
            if d.size and not np.isfinite(d).all():
                raise ValueError(f"image {rec.image_id}: non-finite descriptor value")
        self.images = images
        self.dim = dim

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "Corpus":
        """Build a corpus from per-image (n, dim) arrays; ids assigned 0..N-1."""
        if not arrays:
            raise ValueError("corpus must contain at least one image")
        dim = arrays[0].shape[1]
        images = [
            ImageRecord(i, np.ascontiguousarray(a, dtype=np.float32))
            for i, a in enumerate(arrays)
        ]
        return cls(images, dim)

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def total_features(self) -> int:
        return sum(rec.n_features for rec in self.images)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All descriptors stacked, with parallel image_id / feature_id arrays."""
        if self.total_features == 0:
            x = np.empty((0, self.dim), dtype=np.float32)
            ids = np.empty(0, dtype=np.uint32)
            return x, ids, ids.copy()
        x = np.concatenate([rec.descriptors for rec in self.images], axis=0)
        image_ids = np.concatenate(
            [np.full(rec.n_features, rec.image_id, dtype=np.uint32) for rec in self.images]
        )
        feature_ids = np.concatenate(
            [np.arange(rec.n_features, dtype=np.uint32) for rec in self.images]
        )
        return x, image_ids, feature_ids

    def feature_keys(self) -> np.ndarray:
        """Strictly increasing uint64 keys (image_id << 32 | feature_id)."""
        _, image_ids, feature_ids = self.stacked()
        return (image_ids.astype(np.uint64) << np.uint64(32)) | feature_ids.astype(np.uint64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Corpus):
            return NotImplemented
        if self.dim != other.dim or self.n_images != other.n_images:
            return False
        return all(
            a.image_id == b.image_id and np.array_equal(a.descriptors, b.descriptors)
            for a, b in zip(self.images, other.images)
        )


class Vocabulary:
    """An ordered codebook of centroid vectors defining a nearest-centroid quantizer."""

    def __init__(self, centroids: np.ndarray, seed: int):
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise ValueError("centroids must be a (size, dim) array with size >= 1")
        if centroids.dtype != np.float32:
            raise ValueError("centroids must be float32")
        if not np.isfinite(centroids).all():
            raise ValueError("non-finite centroid value")
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must fit in u64, got {seed}")
        if len(np.unique(centroids, axis=0)) != centroids.shape[0]:
            raise ValueError("duplicate centroids are not allowed")
        self.centroids = centroids
        self.seed = seed

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.centroids, other.centroids)


def write_descriptors(corpus: Corpus, path: str | Path) -> None:
    """Serialize a corpus to the descriptor file format (deterministic bytes)."""
    buf = bytearray()
    buf += DESCRIPTOR_MAGIC
    buf += _U32x2.pack(corpus.dim, corpus.n_images)
    for rec in corpus.images:
        buf += _U32x2.pack(rec.image_id, rec.n_features)
        buf += np.ascontiguousarray(rec.descriptors, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def read_descriptors(path: str | Path) -> Corpus:
    """Parse a descriptor file; errors report the byte offset of the problem."""
    data = Path(path).read_bytes()
    if data[:4] != DESCRIPTOR_MAGIC:
        raise FormatError(f"bad magic: expected {DESCRIPTOR_MAGIC!r}", offset=0)
    if len(data) < 12:
        raise FormatError("truncated header", offset=len(data))
    dim, n_images = _U32x2.unpack_from(data, 4)
    if dim == 0:
        raise FormatError("descriptor dim must be positive", offset=4)
    if n_images == 0:
        raise FormatError("corpus must contain at least one image", offset=8)
    images = []
    off = 12
    for i in range(n_images):
        if off + 8 > len(data):
            raise FormatError(
                f"truncated image header for image index {i}", offset=off
            )
        image_id, n_feat = _U32x2.unpack_from(data, off)
        off += 8
        payload = n_feat * dim * 4
        if off + payload > len(data):
            raise FormatError(
                f"truncated descriptor payload for image_id {image_id}", offset=off
            )
        desc = np.frombuffer(data, dtype="<f4", count=n_feat * dim, offset=off)
        desc = desc.reshape(n_feat, dim).astype(np.float32, copy=True)
        if desc.size and not np.isfinite(desc).all():
            bad = int(np.flatnonzero(~np.isfinite(desc.ravel()))[0])
            raise FormatError(
                f"non-finite value in image_id {image_id}", offset=off + bad * 4
            )
        images.append(ImageRecord(image_id, desc))
        off += payload
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after last image", offset=off)
    return Corpus(images, dim)


def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    buf = bytearray()
    buf += VOCABULARY_MAGIC
    buf += struct.pack("<IIQ", vocab.dim, vocab.size, vocab.seed)
    buf += np.ascontiguousarray(vocab.centroids, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def read_vocabulary(path: str | Path) -> Vocabulary:
    data = Path(path).read_bytes()
    if data[:4] != VOCABULARY_MAGIC:
        raise FormatError(f"bad magic: expected {VOCABULARY_MAGIC!r}", offset=0)
    if len(data) < 20:
        raise FormatError("truncated header", offset=len(data))
    dim, size, seed = struct.unpack_from("<IIQ", data, 4)
    expected = 20 + size * dim * 4
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes for {size}x{dim} centroids, got {len(data)}",
            offset=min(len(data), expected),
        )
    cents = np.frombuffer(data, dtype="<f4", count=size * dim, offset=20)
    cents = cents.reshape(size, dim).astype(np.float32, copy=True)
    return Vocabulary(cents, seed)


def write_ground_truth(gt: dict[int, set[int]], path: str | Path) -> None:
    lines = []
    for qid in sorted(gt):
        rel = gt[qid]
        if not rel:
            raise ValueError(f"query {qid}: relevant set must be non-empty")
        lines.append(f"{qid}: " + " ".join(str(r) for r in sorted(rel)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_ground_truth(path: str | Path) -> dict[int, set[int]]:
    gt: dict[int, set[int]] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise FormatError(f"line {lineno}: expected 'query_id: id id ...'")
        try:
            qid = int(head)
            rel = {int(tok) for tok in tail.split()}
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer id") from None
        if not rel:
            raise FormatError(f"line {lineno}: query {qid} has empty relevant set")
        if qid in gt:
            raise FormatError(f"line {lineno}: duplicate query {qid}")
        gt[qid] = rel
    return gt
