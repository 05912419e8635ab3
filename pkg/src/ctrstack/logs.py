"""Columnar in-memory click log and its line-delimited JSON file format.

One JSON object per impression with the fields ``listing_id, query, title,
tags, price, impressions, clicks, favorites, purchases, label, date,
image_ref``.  Image embeddings live in a sidecar ``<log>.images.npy`` holding a
structured array of ``(listing_id, embedding[2048])``; ``image_ref`` names
the listing id to look up there, or is ``null``.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import IMAGE_DIM, ListingRecord

FIELDS = ("listing_id", "query", "title", "tags", "price", "impressions", "clicks",
          "favorites", "purchases", "label", "date", "image_ref")
_COUNTERS = ("impressions", "clicks", "favorites", "purchases")


def sidecar_path(path) -> str:
    return f"{os.fspath(path)}.images.npy"


@dataclass
class ClickLog:
    """Impression rows referencing a table of listings."""

    listing_ids: list
    titles: list
    tags: list
    prices: np.ndarray
    listing_image: np.ndarray
    images: np.ndarray
    row_listing: np.ndarray
    queries: list
    labels: np.ndarray
    dates: np.ndarray
    impressions: np.ndarray
    clicks: np.ndarray
    favorites: np.ndarray
    purchases: np.ndarray
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.listing_image = np.asarray(self.listing_image, dtype=np.int64)
        self.images = np.asarray(self.images, dtype=np.float32).reshape(-1, IMAGE_DIM)
        self.row_listing = np.asarray(self.row_listing, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.dates = np.asarray(self.dates, dtype=np.int64)
        for name in _COUNTERS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        self._index = {lid: k for k, lid in enumerate(self.listing_ids)}

    def __len__(self) -> int:
        return int(self.row_listing.size)

    @property
    def n_listings(self) -> int:
        return len(self.listing_ids)

    def listing_index(self, listing_id: str) -> int:
        return self._index[listing_id]

    def validate(self) -> None:
        n = len(self)
        for name in ("queries", "labels", "dates") + _COUNTERS:
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has {len(getattr(self, name))} rows, expected {n}")
        if np.any(self.clicks > self.impressions):
            raise DataError(f"row {int(np.argmax(self.clicks > self.impressions))}: clicks exceed impressions")
        for name in _COUNTERS:
            if np.any(getattr(self, name) < 0):
                raise DataError(f"negative {name} counter")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")
        if not np.all(np.isfinite(self.images)):
            raise DataError("non-finite image embedding entries")

    def take(self, rows) -> "ClickLog":
        """Row subset sharing the listing table."""
        rows = np.asarray(rows, dtype=np.int64)
        return ClickLog(self.listing_ids, self.titles, self.tags, self.prices, self.listing_image,
                        self.images, self.row_listing[rows], [self.queries[r] for r in rows.tolist()],
                        self.labels[rows], self.dates[rows], self.impressions[rows],
                        self.clicks[rows], self.favorites[rows], self.purchases[rows])

    def with_counters(self, **counters) -> "ClickLog":
        out = self.take(np.arange(len(self)))
        for name, values in counters.items():
            setattr(out, name, np.asarray(values, dtype=np.int64))
        return out

    def image_of(self, listing: int):
        k = self.listing_image[listing]
        return None if k < 0 else self.images[k]

    def record(self, r: int) -> ListingRecord:
        l = int(self.row_listing[r])
        img = self.image_of(l)
        return ListingRecord(
            listing_id=self.listing_ids[l], query=self.queries[r], title=self.titles[l],
            tags=list(self.tags[l]), price=float(self.prices[l]),
            impressions=int(self.impressions[r]), clicks=int(self.clicks[r]),
            favorites=int(self.favorites[r]), purchases=int(self.purchases[r]),
            label=int(self.labels[r]), date=dt.date.fromordinal(int(self.dates[r])),
            image_embedding=None if img is None else img.astype(np.float64))

    def records(self):
        for r in range(len(self)):
            yield self.record(r)

    @classmethod
    def from_records(cls, records) -> "ClickLog":
        b = _Builder()
        for rec in records:
            b.add(rec.listing_id, rec.title, rec.tags, rec.price, rec.image_embedding, rec.query,
                  rec.label, rec.date.toordinal(), rec.impressions, rec.clicks, rec.favorites,
                  rec.purchases)
        return b.build()

    # --- files -----------------------------------------------------------

    def write(self, path) -> None:
        """Write JSONL (and the image sidecar when any listing has an image)."""
        path = os.fspath(path)
        has_image = self.listing_image >= 0
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for r in range(len(self)):
                l = int(self.row_listing[r])
                obj = {
                    "listing_id": self.listing_ids[l], "query": self.queries[r],
                    "title": self.titles[l], "tags": list(self.tags[l]),
                    "price": float(self.prices[l]),
                    "impressions": int(self.impressions[r]), "clicks": int(self.clicks[r]),
                    "favorites": int(self.favorites[r]), "purchases": int(self.purchases[r]),
                    "label": int(self.labels[r]),
                    "date": dt.date.fromordinal(int(self.dates[r])).isoformat(),
                    "image_ref": self.listing_ids[l] if has_image[l] else None,
                }
                fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")))
                fh.write("\n")
        side = sidecar_path(path)
        if has_image.any():
            ls = np.flatnonzero(has_image)
            width = max(len(self.listing_ids[l]) for l in ls)
            arr = np.zeros(ls.size, dtype=[("listing_id", f"U{width}"), ("embedding", "<f4", (IMAGE_DIM,))])
            arr["listing_id"] = [self.listing_ids[l] for l in ls]
            arr["embedding"] = self.images[self.listing_image[ls]]
            with open(side, "wb") as fh:
                np.save(fh, arr, allow_pickle=False)
        elif os.path.exists(side):
            os.remove(side)

    @classmethod
    def read(cls, path) -> "ClickLog":
        path = os.fspath(path)
        side = sidecar_path(path)
        images = {}
        if os.path.exists(side):
            arr = np.load(side, allow_pickle=False)
            images = {str(lid): arr["embedding"][k] for k, lid in enumerate(arr["listing_id"])}
        b = _Builder()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    missing = [f for f in ("listing_id", "title", "label", "date") if f not in obj]
                    if missing:
                        raise DataError(f"missing fields {missing}")
                    ref = obj.get("image_ref")
                    img = None
                    if ref is not None:
                        if ref not in images:
                            raise DataError(f"image_ref {ref!r} not found in {side}")
                        img = images[ref]
                    label = obj["label"]
                    if label not in (0, 1):
                        raise DataError("label must be 0 or 1")
                    b.add(str(obj["listing_id"]), obj["title"], list(obj.get("tags", [])),
                          float(obj.get("price", 0.0)), img, obj.get("query", ""), label,
                          dt.date.fromisoformat(obj["date"]).toordinal(),
                          int(obj.get("impressions", 0)), int(obj.get("clicks", 0)),
                          int(obj.get("favorites", 0)), int(obj.get("purchases", 0)))
                except DataError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                except (ValueError, TypeError, KeyError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
        log = b.build()
        try:
            log.validate()
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None
        return log


class _Builder:
    def __init__(self):
        self.index = {}
        self.listing_ids, self.titles, self.tags, self.prices = [], [], [], []
        self.listing_image, self.images = [], []
        self.rows = {k: [] for k in ("row_listing", "queries", "labels", "dates") + _COUNTERS}

    def add(self, listing_id, title, tags, price, image, query, label, date, impressions, clicks,
            favorites, purchases):
        l = self.index.get(listing_id)
        if l is None:
            l = self.index[listing_id] = len(self.listing_ids)
            self.listing_ids.append(listing_id)
            self.titles.append(title)
            self.tags.append(list(tags))
            self.prices.append(price)
            if image is None:
                self.listing_image.append(-1)
            else:
                img = np.asarray(image)
                if img.shape != (IMAGE_DIM,):
                    raise DataError(f"{listing_id}: image embedding must have {IMAGE_DIM} entries")
                self.listing_image.append(len(self.images))
                self.images.append(img.astype(np.float32))
        r = self.rows
        r["row_listing"].append(l)
        r["queries"].append(query)
        r["labels"].append(label)
        r["dates"].append(date)
        r["impressions"].append(impressions)
        r["clicks"].append(clicks)
        r["favorites"].append(favorites)
        r["purchases"].append(purchases)

    def build(self) -> ClickLog:
        images = np.stack(self.images) if self.images else np.zeros((0, IMAGE_DIM), np.float32)
        return ClickLog(self.listing_ids, self.titles, self.tags, np.asarray(self.prices, float),
                        np.asarray(self.listing_image, np.int64), images, **self.rows)
