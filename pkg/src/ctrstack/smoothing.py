"""Beta-prior smoothed rates and exponentially smoothed prior parameters."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, replace

import numpy as np

FAMILIES = ("clicks", "favorites", "purchases")


@dataclass(frozen=True)
class SmoothingPrior:
    """Beta(alpha, beta) prior for one counter family.

    ``alpha`` acts as pseudo-events and ``beta`` as pseudo-non-events;
    ``smoothing_factor`` is the weight put on the newest period in
    :func:`update_prior`.
    """

    alpha: float
    beta: float
    smoothing_factor: float = 0.3
    family: str = "clicks"

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.beta > 0 and np.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.smoothing_factor <= 1:
            raise ValueError(f"smoothing_factor must be in (0, 1], got {self.smoothing_factor}")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown counter family {self.family!r}")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "smoothing_factor": self.smoothing_factor, "family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothingPrior":
        return cls(float(d["alpha"]), float(d["beta"]), float(d["smoothing_factor"]), d["family"])


@dataclass(frozen=True)
class PeriodAggregate:
    period: dt.date
    avg_clicks: float
    avg_impressions: float

    def __post_init__(self):
        if self.avg_clicks < 0 or self.avg_impressions < 0:
            raise ValueError("period averages must be non-negative")
        if self.avg_clicks > self.avg_impressions:
            raise ValueError("avg_clicks cannot exceed avg_impressions")


def smoothed_rate(c, v, prior: SmoothingPrior):
    """Posterior-mean rate ``(c + alpha) / (v + alpha + beta)``.

    Accepts scalars or arrays; raises if any ``c > v``.
    """
    c_arr = np.asarray(c, dtype=np.float64)
    v_arr = np.asarray(v, dtype=np.float64)
    if np.any(c_arr > v_arr):
        raise ValueError("event count exceeds impression count")
    if np.any(c_arr < 0):
        raise ValueError("counts must be non-negative")
    out = (c_arr + prior.alpha) / (v_arr + prior.alpha + prior.beta)
    if out.ndim == 0:
        return float(out)
    return out


def update_prior(prior: SmoothingPrior, agg: PeriodAggregate) -> SmoothingPrior:
    """Blend one period's averages into the prior with weight ``smoothing_factor``."""
    if agg.avg_clicks <= 0 or agg.avg_impressions <= 0:
        raise ValueError(f"period {agg.period} has non-positive averages; prior would degenerate")
    s = prior.smoothing_factor
    return replace(prior,
                   alpha=s * agg.avg_clicks + (1 - s) * prior.alpha,
                   beta=s * agg.avg_impressions + (1 - s) * prior.beta)


def fit_prior(aggregates, family="clicks", smoothing_factor=0.3, beta_convention="impressions"):
    """Exponentially smooth a chronological sequence of period aggregates.

    The first usable period initialises the prior; later ones are blended in.
    Periods with no events are skipped since they cannot define a prior.
    ``beta_convention="non_clicks"`` uses ``avg_impressions - avg_clicks`` for
    beta instead of the raw impression average.
    """
    if beta_convention not in ("impressions", "non_clicks"):
        raise ValueError(f"unknown beta_convention {beta_convention!r}")
    prior = None
    for agg in sorted(aggregates, key=lambda a: a.period):
        if beta_convention == "non_clicks":
            agg = PeriodAggregate(agg.period, agg.avg_clicks, agg.avg_impressions - agg.avg_clicks)
            if agg.avg_clicks > agg.avg_impressions:
                continue
        if agg.avg_clicks <= 0 or agg.avg_impressions <= 0:
            continue
        if prior is None:
            prior = SmoothingPrior(agg.avg_clicks, agg.avg_impressions, smoothing_factor, family)
        else:
            prior = update_prior(prior, agg)
    if prior is None:
        raise ValueError(f"no period with positive {family} averages; cannot fit a prior")
    return prior


def daily_aggregates(days, listing, events, impressions):
    """Per-day average events and impressions over listings shown that day.

    ``days``, ``listing``, ``events`` and ``impressions`` are parallel arrays at
    (listing, day) granularity; rows with zero impressions are ignored.
    Returns a list of :class:`PeriodAggregate` keyed by ordinal day.
    """
    days = np.asarray(days)
    shown = np.asarray(impressions) > 0
    out = []
    for d in np.unique(days[shown]):
        m = shown & (days == d)
        n_listings = np.unique(np.asarray(listing)[m]).size
        out.append(PeriodAggregate(dt.date.fromordinal(int(d)),
                                   float(np.sum(np.asarray(events)[m])) / n_listings,
                                   float(np.sum(np.asarray(impressions)[m])) / n_listings))
    return out


def cumulative_aggregates(days, listing, events, impressions):
    """Per-day averages over everything logged up to and including that day.

    For day ``d`` the averages are total events and impressions on days
    ``<= d`` divided by the number of distinct listings shown by ``d``, i.e.
    the per-listing global averages as they stood after that day.
    """
    days = np.asarray(days)
    listing = np.asarray(listing)
    shown = np.asarray(impressions) > 0
    days, listing = days[shown], listing[shown]
    ev = np.asarray(events, dtype=np.float64)[shown]
    im = np.asarray(impressions, dtype=np.float64)[shown]
    if days.size == 0:
        return []
    uniq, inv = np.unique(days, return_inverse=True)
    ev_tot = np.cumsum(np.bincount(inv, weights=ev, minlength=uniq.size))
    im_tot = np.cumsum(np.bincount(inv, weights=im, minlength=uniq.size))
    first = np.full(int(listing.max()) + 1, uniq.size, dtype=np.int64)
    np.minimum.at(first, listing, inv)
    n_seen = np.cumsum(np.bincount(first[np.unique(listing)], minlength=uniq.size))
    return [PeriodAggregate(dt.date.fromordinal(int(d)), float(e / k), float(i / k))
            for d, e, i, k in zip(uniq, ev_tot, im_tot, n_seen)]
