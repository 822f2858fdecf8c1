"""Probabilistic weighting of candidate features retrieved from K posting lists.

Given the K candidate sets of one query feature, every candidate falls into
exactly one "occupied subset" S (the lists that contain it). Candidates shared
by two or more lists are down-weighted by an estimated probability that such a
shared candidate is a true match; the estimate combines

  term 1: the cardinality ratio |∩S| / |∪S| (false matches spread uniformly),
  term 2: a calibrated linear model of the true-match ratio in the overlap,
  term 3: a database-size prior ln(N * c),

as  w = (1 + (term1 / term2) * term3) ** -1,  so 0 < w <= 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

# Lower clamp for term 2: keeps the weight finite when a calibration
# produces an intercept at (or rounding below) zero.
TERM2_FLOOR = 1e-9

# K is a bitmask width here; 8 keeps the subset lattice enumeration trivial.
MAX_LISTS = 8

_DEFAULTS_FILE = "default_merge_config.txt"


def _load_default_params() -> dict[str, float]:
    text = resources.files("bowmerge.data").joinpath(_DEFAULTS_FILE).read_text()
    return _parse_config_text(text)


def _parse_config_text(text: str) -> dict[str, float]:
    params: dict[str, float] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key=value', got {line!r}")
        key = key.strip()
        if key not in ("c", "a", "b", "n", "he_threshold"):
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        params[key] = float(value.strip())
    return params


_DEFAULTS = _load_default_params()


@dataclass(frozen=True)
class MergeConfig:
    """Tunables of the merge weighting; defaults ship from the calibrated config.

    `n_images` must be set to the database size the weight is evaluated
    against. `force_w1` short-circuits the weight to exactly 1, which turns
    merged scoring into plain histogram concatenation.
    """

    n_images: int
    c: float = _DEFAULTS["c"]
    a: float = _DEFAULTS["a"]
    b: float = _DEFAULTS["b"]
    he_threshold: int = int(_DEFAULTS["he_threshold"])
    force_w1: bool = False

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if self.a < 0:
            raise ValueError(f"term-2 slope a must be >= 0, got {self.a}")
        if self.b <= 0:
            raise ValueError(f"term-2 intercept b must be > 0, got {self.b}")
        if self.a + self.b > 1.0:
            raise ValueError(f"term-2 line must satisfy a + b <= 1, got {self.a + self.b}")
        if self.n_images < 1:
            raise ValueError(f"n_images must be >= 1, got {self.n_images}")
        if self.he_threshold < 0:
            raise ValueError(f"he_threshold must be >= 0, got {self.he_threshold}")

    @classmethod
    def from_file(cls, path: str | Path, n_images: int, **overrides) -> "MergeConfig":
        """Read a key=value config file; an `n` key overrides `n_images`."""
        params = _parse_config_text(Path(path).read_text(encoding="utf-8"))
        n = int(params.pop("n", n_images))
        kwargs: dict = {k: v for k, v in params.items()}
        if "he_threshold" in kwargs:
            kwargs["he_threshold"] = int(kwargs["he_threshold"])
        kwargs.update(overrides)
        return cls(n_images=n, **kwargs)

    def to_file(self, path: str | Path, header: str | None = None) -> None:
        lines = []
        if header:
            lines.extend(f"# {h}" for h in header.splitlines())
        lines += [
            f"c={self.c:g}",
            f"a={self.a!r}",
            f"b={self.b!r}",
            f"n={self.n_images}",
            f"he_threshold={self.he_threshold}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def with_n(self, n_images: int) -> "MergeConfig":
        return replace(self, n_images=n_images)


def term1(inter_card: int, union_card: int) -> float:
    """Probability a uniformly placed false match lands in the overlap."""
    if union_card <= 0:
        raise ValueError("union cardinality must be positive")
    if not 0 <= inter_card <= union_card:
        raise ValueError(f"need 0 <= inter <= union, got {inter_card}/{union_card}")
    return inter_card / union_card


def term2(ratio, cfg: MergeConfig):
    """Linear true-match model a*r + b, clamped into [TERM2_FLOOR, 1]."""
    return np.clip(cfg.a * np.asarray(ratio, dtype=np.float64) + cfg.b, TERM2_FLOOR, 1.0)


def term3(n_images: int, c: float) -> float:
    """Database-size prior ln(N * c); requires N * c >= 1."""
    nc = n_images * c
    if nc < 1.0:
        raise ValueError(f"N * c must be >= 1, got {nc}")
    return math.log(nc)


def bayes_weight(inter_card, union_card, cfg: MergeConfig):
    """Estimated probability that an overlap candidate is a true match.

    Accepts scalars or equally shaped integer arrays; returns float64 of the
    same shape. inter_card == 0 yields exactly 1.0.
    """
    inter = np.asarray(inter_card, dtype=np.float64)
    union = np.asarray(union_card, dtype=np.float64)
    if np.any(union <= 0):
        raise ValueError("union cardinality must be positive")
    if np.any(inter > union) or np.any(inter < 0):
        raise ValueError("need 0 <= inter <= union")
    if cfg.force_w1:
        w = np.ones_like(inter)
        return float(w) if np.isscalar(inter_card) else w
    r = inter / union
    t3 = term3(cfg.n_images, cfg.c)
    w = 1.0 / (1.0 + (r / term2(r, cfg)) * t3)
    return float(w) if np.isscalar(inter_card) else w


@dataclass(frozen=True)
class SetDecomposition:
    """Classification of the union of K candidate lists by containing subset.

    Subsets are bitmasks over list indices (bit k set = present in list k).
    members_count[m] counts features contained in exactly the lists of m;
    inter_card[m] / union_card[m] are the plain intersection / union
    cardinalities over the lists of m.
    """

    n_lists: int
    keys: np.ndarray  # distinct union keys, ascending uint64
    masks: np.ndarray  # uint32 exact-subset mask per key
    members_count: np.ndarray  # (2**K,) int64
    inter_card: np.ndarray  # (2**K,) int64, [0] unused
    union_card: np.ndarray  # (2**K,) int64, [0] unused

    @property
    def union_size(self) -> int:
        return len(self.keys)

    def members(self, mask: int) -> np.ndarray:
        return self.keys[self.masks == mask]

    def ratio(self, mask: int) -> float:
        """Cardinality ratio |∩ over lists of mask| / |∪ over lists of mask|."""
        if not 0 < mask < 1 << self.n_lists:
            raise ValueError(f"mask {mask} out of range for {self.n_lists} lists")
        return term1(int(self.inter_card[mask]), int(self.union_card[mask]))


def _sorted_group_masks(cat_keys: np.ndarray, cat_bits: np.ndarray):
    """Group a concatenation of sorted lists by key.

    Returns (order, starts, uniq_keys, masks): `order` sorts the
    concatenation, `starts` indexes group starts in sorted order, `masks` is
    the OR of source bits per group. Assumes each key occurs at most once per
    source list.
    """
    order = np.argsort(cat_keys, kind="stable")
    sorted_keys = cat_keys[order]
    if len(sorted_keys) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, sorted_keys, np.empty(0, dtype=np.uint32)
    first = np.empty(len(sorted_keys), dtype=bool)
    first[0] = True
    np.not_equal(sorted_keys[1:], sorted_keys[:-1], out=first[1:])
    starts = np.flatnonzero(first)
    masks = np.bitwise_or.reduceat(cat_bits[order], starts)
    return order, starts, sorted_keys[starts], masks.astype(np.uint32)


def decompose(lists: list[np.ndarray]) -> SetDecomposition:
    """Classify the union of K sorted, duplicate-free posting lists.

    Input lists hold uint64 feature keys in strictly ascending order; a
    violation raises ValueError. The whole decomposition is computed in one
    simultaneous sweep of the concatenated lists.
    """
    k = len(lists)
    if not 1 <= k <= MAX_LISTS:
        raise ValueError(f"need between 1 and {MAX_LISTS} lists, got {k}")
    arrays = []
    for i, lst in enumerate(lists):
        a = np.ascontiguousarray(np.asarray(lst, dtype=np.uint64))
        if a.ndim != 1:
            raise ValueError(f"list {i} must be one-dimensional")
        if len(a) > 1 and not np.all(a[1:] > a[:-1]):
            raise ValueError(f"list {i} is not sorted strictly ascending")
        arrays.append(a)

    cat_keys = np.concatenate(arrays) if arrays else np.empty(0, dtype=np.uint64)
    cat_bits = np.concatenate(
        [np.full(len(a), 1 << i, dtype=np.uint32) for i, a in enumerate(arrays)]
    )
    _, _, uniq_keys, masks = _sorted_group_masks(cat_keys, cat_bits)

    n_subsets = 1 << k
    members_count = np.bincount(masks, minlength=n_subsets).astype(np.int64)

    # Subset lattice: plain intersections are superset sums of the exact
    # counts; plain unions count everything overlapping the subset.
    inter_card = np.zeros(n_subsets, dtype=np.int64)
    union_card = np.zeros(n_subsets, dtype=np.int64)
    all_masks = np.arange(n_subsets)
    for s in range(1, n_subsets):
        inter_card[s] = members_count[(all_masks & s) == s].sum()
        union_card[s] = members_count[(all_masks & s) != 0].sum()

    return SetDecomposition(
        n_lists=k,
        keys=uniq_keys,
        masks=masks,
        members_count=members_count,
        inter_card=inter_card,
        union_card=union_card,
    )
