"""Feature batches and smoothing priors computed from a :class:`ClickLog`."""

from __future__ import annotations

import numpy as np

from . import features
from .logs import ClickLog
from .smoothing import cumulative_aggregates, daily_aggregates, fit_prior


def historical_rows(log: ClickLog, priors: dict, transform: str = "rate"):
    counts = {"clicks": log.clicks, "favorites": log.favorites, "purchases": log.purchases}
    return features.historical_batch(log.impressions, counts, priors, transform)


def content_rows(log: ClickLog, cfg: features.ContentConfig):
    return features.content_batch(log.listing_ids, log.titles, log.tags, log.prices, cfg,
                                  log.row_listing, log.images, log.listing_image, log.queries)


def id_rows(log: ClickLog, cfg: features.HashConfig):
    return features.listing_id_batch(log.listing_ids, log.row_listing, cfg)


def _cells(log: ClickLog):
    """Distinct (listing, day) cells in listing-then-day order and each row's cell."""
    key = log.row_listing * (1 << 32) + (log.dates - log.dates.min(initial=0))
    uniq, inv = np.unique(key, return_inverse=True)
    return uniq, inv


def daily_counts(log: ClickLog, family: str):
    """Per (listing, day) impressions and events of ``family`` over the log's rows.

    Clicks come from labels.  Favorites and purchases come from the
    cumulative counters: the increase between two consecutive days on which a
    listing is shown is attributed to the earlier day.
    """
    uniq, inv = _cells(log)
    listing = np.zeros(uniq.size, dtype=np.int64)
    day = np.zeros(uniq.size, dtype=np.int64)
    listing[inv] = log.row_listing
    day[inv] = log.dates
    imps = np.bincount(inv, minlength=uniq.size).astype(np.float64)
    if family == "clicks":
        events = np.bincount(inv, weights=log.labels.astype(np.float64), minlength=uniq.size)
    elif family in ("favorites", "purchases"):
        counter = np.zeros(uniq.size)
        np.maximum.at(counter, inv, getattr(log, family).astype(np.float64))
        events = np.zeros(uniq.size)
        same = listing[1:] == listing[:-1]
        events[:-1][same] = np.maximum(counter[1:] - counter[:-1], 0.0)[same]
        events = np.minimum(events, imps)
    else:
        raise ValueError(f"unknown counter family {family!r}")
    return day, listing, events, imps


AGGREGATIONS = ("cumulative", "daily")


def fit_priors(log: ClickLog, families=("clicks",), smoothing_factor: float = 0.3,
               beta_convention: str = "impressions", aggregation: str = "cumulative") -> dict:
    """Exponentially smoothed Beta priors, one period per day.

    ``aggregation`` picks the per-day averages: ``"cumulative"`` divides
    everything logged up to the day by the listings shown so far; ``"daily"``
    averages that day's own impressions over the listings shown that day.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown prior aggregation {aggregation!r}")
    priors = {}
    for family in families:
        day, listing, events, imps = daily_counts(log, family)
        agg_fn = cumulative_aggregates if aggregation == "cumulative" else daily_aggregates
        aggs = agg_fn(day, listing, events, imps)
        priors[family] = fit_prior(aggs, family, smoothing_factor, beta_convention)
    return priors
