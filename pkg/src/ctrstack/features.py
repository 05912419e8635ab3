"""Feature construction for the historical, content-based and listing-id models."""

from __future__ import annotations

import datetime as dt
import hashlib
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .smoothing import SmoothingPrior, smoothed_rate
from .sparse import FeatureBatch, SparseVector

IMAGE_DIM = 2048

# reserved low indices of the historical and ensemble spaces
RESERVED_DIM = 16
BIAS_INDEX = 0
CTR_INDEX = 1
FAVORITE_INDEX = 2
PURCHASE_INDEX = 3
FAMILY_INDEX = {"clicks": CTR_INDEX, "favorites": FAVORITE_INDEX, "purchases": PURCHASE_INDEX}

_WORD_RE = re.compile(r"\w+", re.UNICODE)
_MASK64 = (1 << 64) - 1


@dataclass
class ListingRecord:
    """One logged (query, listing) impression."""

    listing_id: str
    query: str
    title: str
    tags: list
    price: float
    impressions: int
    clicks: int
    label: int
    date: dt.date
    favorites: int = 0
    purchases: int = 0
    image_embedding: np.ndarray | None = None

    def __post_init__(self):
        if self.price < 0 or not math.isfinite(self.price):
            raise ValueError(f"{self.listing_id}: price must be a non-negative number")
        for name in ("impressions", "clicks", "favorites", "purchases"):
            if getattr(self, name) < 0:
                raise ValueError(f"{self.listing_id}: {name} must be non-negative")
        if self.clicks > self.impressions:
            raise ValueError(f"{self.listing_id}: clicks exceed impressions")
        if self.label not in (0, 1):
            raise ValueError(f"{self.listing_id}: label must be 0 or 1")
        if self.image_embedding is not None:
            check_image(self.image_embedding, self.listing_id)


def check_image(emb, listing_id="?"):
    emb = np.asarray(emb)
    if emb.shape != (IMAGE_DIM,):
        raise ValueError(f"{listing_id}: image embedding must have {IMAGE_DIM} entries, got shape {emb.shape}")
    if not np.all(np.isfinite(emb)):
        raise ValueError(f"{listing_id}: image embedding has non-finite entries")
    return emb


@dataclass(frozen=True)
class HashConfig:
    dimension_bits: int = 18
    seed: int = 0
    use_sign_hash: bool = True

    def __post_init__(self):
        if not 8 <= self.dimension_bits <= 28:
            raise ValueError(f"dimension_bits must be in [8, 28], got {self.dimension_bits}")

    @property
    def dimension(self) -> int:
        return 1 << self.dimension_bits


def _default_price_grid():
    # nine edges -> ten buckets, log-spaced over typical listing prices
    return tuple(float(x) for x in np.round(np.geomspace(2.0, 500.0, 9), 2))


@dataclass(frozen=True)
class ContentConfig:
    hash: HashConfig = field(default_factory=HashConfig)
    price_grid: tuple = field(default_factory=_default_price_grid)
    include_listing_id: bool = True
    include_query: bool = False
    include_image: bool = True

    @property
    def dimension(self) -> int:
        return self.hash.dimension + IMAGE_DIM

    def to_dict(self) -> dict:
        return {"hash": {"dimension_bits": self.hash.dimension_bits, "seed": self.hash.seed,
                         "use_sign_hash": self.hash.use_sign_hash},
                "price_grid": list(self.price_grid), "include_listing_id": self.include_listing_id,
                "include_query": self.include_query, "include_image": self.include_image}

    @classmethod
    def from_dict(cls, d: dict) -> "ContentConfig":
        d = dict(d)
        h = HashConfig(**d.pop("hash", {}))
        if "price_grid" in d:
            d["price_grid"] = tuple(float(x) for x in d["price_grid"])
        return cls(hash=h, **d)


@dataclass
class MultimodalEmbedding:
    text: SparseVector
    image: np.ndarray | None
    combined: SparseVector


def _words(text: str) -> list:
    return _WORD_RE.findall(text.lower())


def _grams(words, prefix):
    out = [f"{prefix}-uni:{w}" for w in words]
    out += [f"{prefix}-bi:{a} {b}" for a, b in zip(words, words[1:])]
    return out


def tokenize(title: str, tags, query: str | None = None) -> list:
    """Namespaced lowercase unigrams and bigrams of the title and each tag.

    Bigrams never cross the title/tag boundary or the boundary between two
    tags.  Query unigrams are added under their own namespace when ``query``
    is given.
    """
    tokens = _grams(_words(title), "title")
    for tag in tags:
        tokens += _grams(_words(tag), "tag")
    if query is not None:
        tokens += [f"query-uni:{w}" for w in _words(query)]
    return tokens


@lru_cache(maxsize=1 << 20)
def hash_token(token: str, seed: int = 0) -> int:
    """Unsigned 64-bit keyed BLAKE2b hash of ``token``."""
    key = (seed & _MASK64).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def _hashed_entries(tokens, cfg: HashConfig):
    mask = cfg.dimension - 1
    idx = np.empty(len(tokens), dtype=np.int64)
    val = np.ones(len(tokens))
    for k, tok in enumerate(tokens):
        h = hash_token(tok, cfg.seed)
        idx[k] = h & mask
        # the top bit is independent of the low index bits for dimension_bits <= 28
        if cfg.use_sign_hash and h >> 63:
            val[k] = -1.0
    return idx, val


def hash_text(tokens, cfg: HashConfig) -> SparseVector:
    idx, val = _hashed_entries(list(tokens), cfg)
    return SparseVector.from_entries(idx, val, cfg.dimension)


def price_bucket(price: float, grid) -> int:
    return int(np.searchsorted(np.asarray(grid), price, side="right"))


def content_tokens(listing_id, title, tags, price, cfg: ContentConfig, query=None) -> list:
    tokens = tokenize(title, tags, query if cfg.include_query else None)
    tokens.append(f"price:{price_bucket(price, cfg.price_grid)}")
    if cfg.include_listing_id:
        tokens.append(f"id:{listing_id}")
    tokens.append("bias:")
    return tokens


def _as_content_config(cfg) -> ContentConfig:
    if isinstance(cfg, ContentConfig):
        return cfg
    if isinstance(cfg, HashConfig):
        return ContentConfig(hash=cfg)
    raise TypeError(f"expected HashConfig or ContentConfig, got {type(cfg).__name__}")


def build_content_features(rec: ListingRecord, cfg) -> MultimodalEmbedding:
    """Hashed text and scalar features concatenated with the image embedding.

    Text occupies ``[0, D)``; the image occupies ``[D, D + 2048)``.
    """
    ccfg = _as_content_config(cfg)
    d_text = ccfg.hash.dimension
    text = hash_text(content_tokens(rec.listing_id, rec.title, rec.tags, rec.price, ccfg, rec.query),
                     ccfg.hash)
    text = SparseVector(text.indices, text.values, d_text)
    image = None
    idx, val = text.indices, text.values
    if rec.image_embedding is not None and ccfg.include_image:
        image = check_image(rec.image_embedding, rec.listing_id).astype(np.float64)
        nz = np.flatnonzero(image)
        idx = np.concatenate([idx, d_text + nz])
        val = np.concatenate([val, image[nz]])
    combined = SparseVector(idx, val, ccfg.dimension)
    return MultimodalEmbedding(text, image, combined)


def listing_id_features(listing_id: str, cfg: HashConfig) -> SparseVector:
    """Single hashed listing-id feature plus a bias."""
    return hash_text([f"id:{listing_id}", "bias:"], cfg)


def _transform(rate, transform):
    if transform == "rate":
        return rate
    if transform == "logit":
        return np.log(rate) - np.log1p(-rate)
    raise ValueError(f"unknown historical transform {transform!r}")


def build_historical_features(rec: ListingRecord, priors: dict, transform: str = "rate") -> SparseVector:
    """Smoothed behavioral rates at reserved indices plus a bias.

    ``priors`` maps counter family to :class:`SmoothingPrior`; ``clicks`` is
    required, ``favorites`` and ``purchases`` are used when present.
    """
    if "clicks" not in priors:
        raise KeyError("a clicks prior is required for historical features")
    counts = {"clicks": rec.clicks, "favorites": rec.favorites, "purchases": rec.purchases}
    idx, val = [BIAS_INDEX], [1.0]
    for family in ("clicks", "favorites", "purchases"):
        if family in priors:
            c = min(counts[family], rec.impressions)
            idx.append(FAMILY_INDEX[family])
            val.append(float(_transform(smoothed_rate(c, rec.impressions, priors[family]), transform)))
    return SparseVector.from_entries(idx, val, RESERVED_DIM)


def historical_batch(impressions, counts: dict, priors: dict, transform: str = "rate") -> FeatureBatch:
    """Vectorised :func:`build_historical_features`, one block per row.

    ``counts`` maps family name to an array parallel to ``impressions``.
    """
    if "clicks" not in priors:
        raise KeyError("a clicks prior is required for historical features")
    v = np.asarray(impressions, dtype=np.float64)
    cols = [(BIAS_INDEX, np.ones_like(v))]
    for family in ("clicks", "favorites", "purchases"):
        if family in priors:
            c = np.minimum(np.asarray(counts[family], dtype=np.float64), v)
            cols.append((FAMILY_INDEX[family], _transform(smoothed_rate(c, v, priors[family]), transform)))
    return _fixed_width_batch(cols, v.size, RESERVED_DIM)


def _fixed_width_batch(cols, n_rows, dim) -> FeatureBatch:
    """Rows with the same reserved columns; zero values are dropped per row."""
    index = np.array([c for c, _ in cols], dtype=np.int64)
    vals = np.stack([np.asarray(v, dtype=np.float64) for _, v in cols], axis=1) if cols else np.zeros((n_rows, 0))
    keep = vals != 0.0
    counts = keep.sum(axis=1)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.broadcast_to(index, vals.shape)[keep]
    return FeatureBatch(indptr, indices, vals[keep], np.arange(n_rows), dim)


def ensemble_impression_feature(impressions: int) -> int:
    """``floor(ln(1 + impressions))``."""
    if impressions < 0:
        raise ValueError("impressions must be non-negative")
    return int(math.floor(math.log1p(impressions)))


def ensemble_impression_features(impressions) -> np.ndarray:
    imps = np.asarray(impressions)
    if np.any(imps < 0):
        raise ValueError("impressions must be non-negative")
    return np.floor(np.log1p(imps.astype(np.float64)))


def content_batch(listing_ids, titles, tags, prices, cfg: ContentConfig, row_listing,
                  images=None, listing_image=None, queries=None) -> FeatureBatch:
    """Content rows for a log, hashing each distinct listing (or listing/query pair) once.

    ``row_listing`` maps each row to a listing index.  ``images`` is an
    ``(n_images, 2048)`` array and ``listing_image`` maps listing index to an
    image row or ``-1``.
    """
    row_listing = np.asarray(row_listing, dtype=np.int64)
    if cfg.include_query:
        if queries is None:
            raise ValueError("include_query requires per-row queries")
        keys = list(zip(row_listing.tolist(), queries))
        uniq = {}
        row_block = np.empty(row_listing.size, dtype=np.int64)
        for r, key in enumerate(keys):
            row_block[r] = uniq.setdefault(key, len(uniq))
        block_keys = list(uniq)
    else:
        used = np.unique(row_listing)
        block_of = np.full(len(listing_ids), -1, dtype=np.int64)
        block_of[used] = np.arange(used.size)
        row_block = block_of[row_listing]
        block_keys = [(int(l), None) for l in used]
    vecs = []
    for l, q in block_keys:
        toks = content_tokens(listing_ids[l], titles[l], tags[l], prices[l], cfg, q)
        vecs.append(hash_text(toks, cfg.hash))
    batch = FeatureBatch.from_vectors(vecs, cfg.hash.dimension)
    dense = np.zeros((0, 0), dtype=np.float32)
    row_dense = None
    if cfg.include_image and images is not None and listing_image is not None and len(images):
        dense = np.ascontiguousarray(images, dtype=np.float32)
        row_dense = np.asarray(listing_image, dtype=np.int64)[row_listing]
    return FeatureBatch(batch.indptr, batch.indices, batch.values, row_block, cfg.dimension,
                        dense, row_dense, cfg.hash.dimension)


def listing_id_batch(listing_ids, row_listing, cfg: HashConfig) -> FeatureBatch:
    row_listing = np.asarray(row_listing, dtype=np.int64)
    used = np.unique(row_listing)
    block_of = np.full(len(listing_ids), -1, dtype=np.int64)
    block_of[used] = np.arange(used.size)
    vecs = [listing_id_features(listing_ids[l], cfg) for l in used]
    batch = FeatureBatch.from_vectors(vecs, cfg.dimension)
    return FeatureBatch(batch.indptr, batch.indices, batch.values, block_of[row_listing], cfg.dimension)


def row_uniform(seed: int, ids: np.ndarray) -> np.ndarray:
    """Counter-based uniforms in [0, 1): SplitMix64 of (seed, id)."""
    with np.errstate(over="ignore"):
        z = ids.astype(np.uint64) + np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0xD1B54A32D192ED03)
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
