"""Synthetic promoted-listing click logs with power-law impressions.

Each listing gets a latent click rate drawn from a Beta prior.  Title/tag
words and image embeddings are correlated with that rate at a configurable
strength, impressions per listing follow a shifted power law, and every
impression becomes one labeled row.  Counters on each row cover the training
window strictly before the row's date, the same convention the experiment
pipeline uses when it recomputes them.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, stats

from .errors import ConfigError
from .features import IMAGE_DIM
from .logs import ClickLog

_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "da", "fi", "go",
              "hu", "je", "pa", "zo", "ri", "mu", "te", "la")


@dataclass(frozen=True)
class SyntheticSpec:
    n_listings: int = 20000
    days: int = 32
    vocab_size: int = 5000
    true_alpha: float = 1.0
    true_beta: float = 19.0
    impressions_per_day: int = 40000
    power_law_exponent: float = 1.0
    text_signal_strength: float = 0.4
    image_signal_strength: float = 0.25
    warm_fraction: float = 0.3
    warm_threshold: int = 30
    new_listing_fraction: float = 0.2
    image_coverage: float = 0.9
    title_words: int = 6
    tags_per_listing: int = 5
    n_image_clusters: int = 16
    n_queries: int = 300
    start_date: str = "2017-06-01"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_listings", "days", "vocab_size", "impressions_per_day", "warm_threshold",
                     "title_words", "tags_per_listing", "n_image_clusters", "n_queries"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.days < 2:
            raise ConfigError("days must cover at least one training day and the validation day")
        if self.true_alpha <= 0 or self.true_beta <= 0:
            raise ConfigError("true prior parameters must be positive")
        if self.power_law_exponent <= 0:
            raise ConfigError("power_law_exponent must be positive")
        for name in ("text_signal_strength", "image_signal_strength", "new_listing_fraction",
                     "image_coverage"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 < self.warm_fraction < 1:
            raise ConfigError("warm_fraction must lie in (0, 1)")
        try:
            dt.date.fromisoformat(self.start_date)
        except ValueError as exc:
            raise ConfigError(f"bad start_date: {exc}") from None

    @property
    def anchor_date(self) -> dt.date:
        """Day after the last logged day; the last day is the validation day."""
        return dt.date.fromisoformat(self.start_date) + dt.timedelta(days=self.days)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)


def _vocabulary(size, rng):
    words = set()
    out = []
    while len(out) < size:
        k = rng.integers(2, 5)
        w = "".join(rng.choice(_SYLLABLES, size=k))
        if w not in words:
            words.add(w)
            out.append(w)
    return out


def _warm_fraction(offset, spec, alive_days):
    ranks = np.arange(1, spec.n_listings + 1, dtype=np.float64)
    u = (ranks + offset) ** -spec.power_law_exponent
    lam = spec.impressions_per_day * u / u.sum() * alive_days
    return float(np.mean(stats.poisson.sf(spec.warm_threshold - 1, lam)))


def solve_popularity_offset(spec: SyntheticSpec, alive_days=None) -> float:
    """Rank offset of the power law that yields ``spec.warm_fraction`` warm listings.

    ``alive_days`` gives each rank's number of training days; the generator
    passes the realised values.  Raises :class:`ConfigError` when no offset
    reaches the target under the impression budget.
    """
    if alive_days is None:
        alive_days = np.full(spec.n_listings, spec.days - 1, dtype=np.float64)
    grid = np.concatenate([[0.0], np.geomspace(1e-2, 1e3 * spec.n_listings, 200)])
    fr = np.array([_warm_fraction(o, spec, alive_days) for o in grid])
    best = int(np.argmax(fr))
    target = spec.warm_fraction
    if fr[best] < target - 0.005:
        raise ConfigError(
            f"warm_fraction={target} unreachable: at most {fr[best]:.3f} of listings reach "
            f"{spec.warm_threshold} impressions with exponent {spec.power_law_exponent} and "
            f"{spec.impressions_per_day} impressions/day")
    if fr[best] <= target:
        return float(grid[best])
    # prefer the flatter side of the peak; fall back to the steeper side
    above = fr >= target
    after = np.flatnonzero(~above[best:])
    if after.size:
        lo, hi = best + after[0] - 1, best + after[0]
    elif above[0]:
        return 0.0
    else:
        lo = int(np.flatnonzero(~above[:best])[-1])
        hi = lo + 1
    return float(optimize.brentq(lambda o: _warm_fraction(o, spec, alive_days) - target,
                                 grid[lo], grid[hi], xtol=1e-6))


def generate_synthetic_logs(spec: SyntheticSpec) -> ClickLog:
    """Generate a click log covering ``spec.days`` days; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    n, days = spec.n_listings, spec.days
    start = dt.date.fromisoformat(spec.start_date).toordinal()

    theta = rng.beta(spec.true_alpha, spec.true_beta, size=n)
    quantile = (stats.rankdata(theta) - 0.5) / n

    born = np.zeros(n, dtype=np.int64)
    new = rng.random(n) < spec.new_listing_fraction
    born[new] = rng.integers(1, days, size=int(new.sum()))
    alive_train = np.clip(days - 1 - born, 0, None).astype(np.float64)

    # popularity rank is independent of the latent rate
    rank_of = rng.permutation(n)
    alive_by_rank = np.empty(n)
    alive_by_rank[rank_of] = alive_train
    offset = solve_popularity_offset(spec, alive_by_rank)
    u = (rank_of + 1.0 + offset) ** -spec.power_law_exponent
    lam = spec.impressions_per_day * u / u.sum()

    alive = np.arange(days)[None, :] >= born[:, None]
    counts = rng.poisson(lam[:, None] * alive)            # (listing, day)

    # text
    vocab = _vocabulary(spec.vocab_size, rng)
    V = spec.vocab_size

    def draw_words(k):
        informative = rng.random((n, k)) < spec.text_signal_strength
        centre = quantile[:, None] * V + rng.normal(0.0, 0.02 * V, size=(n, k))
        idx = np.where(informative, np.clip(centre, 0, V - 1).astype(np.int64),
                       rng.integers(0, V, size=(n, k)))
        return idx

    title_idx = draw_words(spec.title_words)
    tag_idx = draw_words(2 * spec.tags_per_listing)
    tag_len = rng.integers(1, 3, size=(n, spec.tags_per_listing))
    titles = [" ".join(vocab[j] for j in row).capitalize() for row in title_idx.tolist()]
    tags = []
    for row, lens in zip(tag_idx.tolist(), tag_len.tolist()):
        tags.append([" ".join(vocab[j] for j in row[2 * t:2 * t + lens[t]])
                     for t in range(spec.tags_per_listing)])
    prices = np.round(rng.lognormal(3.0, 0.8, size=n), 2)

    # images: cluster chosen by rate quantile (or at random), noise shrinks with signal
    centroids = rng.normal(0.0, 1.0, size=(spec.n_image_clusters, IMAGE_DIM)) / np.sqrt(IMAGE_DIM) * 4.0
    has_image = rng.random(n) < spec.image_coverage
    informative = rng.random(n) < spec.image_signal_strength
    cluster = np.where(informative,
                       np.minimum((quantile * spec.n_image_clusters).astype(np.int64),
                                  spec.n_image_clusters - 1),
                       rng.integers(0, spec.n_image_clusters, size=n))
    img_listings = np.flatnonzero(has_image)
    noise_scale = (1.0 - spec.image_signal_strength) * 4.0 / np.sqrt(IMAGE_DIM)
    images = np.empty((img_listings.size, IMAGE_DIM), dtype=np.float32)
    for s in range(0, img_listings.size, 4096):
        chunk = img_listings[s:s + 4096]
        images[s:s + chunk.size] = (centroids[cluster[chunk]]
                                    + noise_scale * rng.normal(size=(chunk.size, IMAGE_DIM)))
    listing_image = np.full(n, -1, dtype=np.int64)
    listing_image[img_listings] = np.arange(img_listings.size)

    queries = [" ".join(vocab[j] for j in rng.integers(0, V, size=rng.integers(1, 4)))
               for _ in range(spec.n_queries)]

    # rows: one per impression, day by day, shuffled within each day
    flat = counts.ravel()
    cell = np.repeat(np.arange(flat.size), flat)
    row_listing = cell // days
    row_day = cell % days
    order = np.lexsort((rng.random(cell.size), row_day))
    row_listing, row_day = row_listing[order], row_day[order]
    labels = (rng.random(row_listing.size) < theta[row_listing]).astype(np.int8)
    fav_rate = rng.beta(3.0, 7.0, size=n)
    pur_rate = rng.beta(1.0, 19.0, size=n)
    fav_evt = labels.astype(bool) & (rng.random(labels.size) < fav_rate[row_listing])
    pur_evt = labels.astype(bool) & (rng.random(labels.size) < pur_rate[row_listing])
    row_query = rng.integers(0, spec.n_queries, size=row_listing.size)

    # counters strictly before each row's date, training days only
    train_row = row_day < days - 1
    key = row_listing * days + row_day

    def cumulative_before(events):
        per_cell = np.bincount(key[train_row], weights=events[train_row].astype(np.float64),
                               minlength=n * days).reshape(n, days)
        before = np.cumsum(per_cell, axis=1) - per_cell
        return before.ravel()[key].astype(np.int64)

    ones = np.ones(row_listing.size)
    return ClickLog(
        listing_ids=[f"L{l:07d}" for l in range(n)], titles=titles, tags=tags, prices=prices,
        listing_image=listing_image, images=images, row_listing=row_listing,
        queries=[queries[q] for q in row_query.tolist()], labels=labels, dates=start + row_day,
        impressions=cumulative_before(ones), clicks=cumulative_before(labels),
        favorites=cumulative_before(fav_evt), purchases=cumulative_before(pur_evt))
