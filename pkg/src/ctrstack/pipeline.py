"""Progressive validation: windowing, negative subsampling, calibration and the variant experiment."""

from __future__ import annotations

import datetime as dt
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .ensemble import PartitionConfig, warm_mask
from .features import row_uniform
from .errors import DataError
from .logs import ClickLog
from .variants import ModelBundle, TrainingSet, VariantSpec, default_variants, train_variant

CALIBRATION_CLAMP = 1e-6


@dataclass(frozen=True)
class WindowConfig:
    """Train on ``[t - 32, t - 2]``, validate on ``t - 1`` for anchor date ``t``."""

    anchor_date: dt.date
    negative_sample_rate: float = 0.25
    sample_seed: int = 0
    train_start_offset: int = 32
    train_end_offset: int = 2

    def __post_init__(self):
        if isinstance(self.anchor_date, str):
            object.__setattr__(self, "anchor_date", dt.date.fromisoformat(self.anchor_date))
        if not 0 < self.negative_sample_rate <= 1:
            raise ValueError("negative_sample_rate must lie in (0, 1]")
        if not self.train_start_offset >= self.train_end_offset >= 2:
            raise ValueError("training window must end before the validation day")

    @property
    def train_start(self) -> dt.date:
        return self.anchor_date - dt.timedelta(days=self.train_start_offset)

    @property
    def train_end(self) -> dt.date:
        return self.anchor_date - dt.timedelta(days=self.train_end_offset)

    @property
    def validation_day(self) -> dt.date:
        return self.anchor_date - dt.timedelta(days=1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor_date"] = self.anchor_date.isoformat()
        return d


def default_anchor(log: ClickLog) -> dt.date:
    """Anchor such that the log's last day is the validation day."""
    if len(log) == 0:
        raise DataError("empty log")
    return dt.date.fromordinal(int(log.dates.max()) + 1)


def window_counters(train: ClickLog, start_ordinal: int):
    """Per-row impressions/clicks strictly before the row's day, and per-listing window totals."""
    key = train.row_listing * (1 << 32) + (train.dates - start_ordinal)
    cells, inv = np.unique(key, return_inverse=True)
    imps = np.bincount(inv, minlength=cells.size).astype(np.int64)
    clicks = np.bincount(inv, weights=train.labels, minlength=cells.size).astype(np.int64)
    cell_listing = cells >> 32
    first = np.concatenate([[True], cell_listing[1:] != cell_listing[:-1]])
    seg = np.cumsum(first) - 1

    def before(x):
        c = np.cumsum(x)
        excl = c - x
        return excl - excl[first][seg]

    totals_imps = np.zeros(train.n_listings, dtype=np.int64)
    totals_clicks = np.zeros(train.n_listings, dtype=np.int64)
    np.add.at(totals_imps, cell_listing, imps)
    np.add.at(totals_clicks, cell_listing, clicks)
    return before(imps)[inv], before(clicks)[inv], totals_imps, totals_clicks


def split_window(log: ClickLog, window: WindowConfig):
    """Training-window and validation-day logs with counters rebuilt from the window.

    Counters on every returned row count only training-window impressions
    and clicks before that row's day, so nothing from the validation day (or
    later) reaches a feature.  Returns ``(train_log, valid_log,
    listing_impressions)``.
    """
    start = window.train_start.toordinal()
    end = window.train_end.toordinal()
    vday = window.validation_day.toordinal()
    in_train = (log.dates >= start) & (log.dates <= end)
    if not in_train.any():
        raise DataError(f"no rows in training window [{window.train_start}, {window.train_end}]")
    in_valid = log.dates == vday
    train = log.take(np.flatnonzero(in_train))
    valid = log.take(np.flatnonzero(in_valid))
    imps, clicks, tot_imps, tot_clicks = window_counters(train, start)
    train = train.with_counters(impressions=imps, clicks=clicks,
                                favorites=np.minimum(train.favorites, imps),
                                purchases=np.minimum(train.purchases, imps))
    v_imps = tot_imps[valid.row_listing]
    valid = valid.with_counters(impressions=v_imps, clicks=tot_clicks[valid.row_listing],
                                favorites=np.minimum(valid.favorites, v_imps),
                                purchases=np.minimum(valid.purchases, v_imps))
    return train, valid, tot_imps


def subsample_negatives(labels, rate: float, seed: int, row_ids=None):
    """Keep each negative with probability ``rate``; kept negatives weigh ``1 / rate``.

    The keep decision for a row depends only on ``(seed, row_id)``.  Returns
    ``(kept_row_indices, weights_of_kept_rows)``.
    """
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    labels = np.asarray(labels)
    ids = np.arange(labels.size) if row_ids is None else np.asarray(row_ids)
    pos = labels == 1
    if rate == 1:
        keep = np.ones(labels.size, dtype=bool)
    else:
        keep = pos | (row_uniform(seed, ids) < rate)
    kept = np.flatnonzero(keep)
    weights = np.where(pos[kept], 1.0, 1.0 / rate)
    return kept, weights


@dataclass
class CalibrationParams:
    scale: float
    shift: float
    reference_mean: float
    reference_std: float
    clamped: int = 0

    def apply(self, scores, clamp: bool = True) -> np.ndarray:
        out = self.scale * np.asarray(scores, dtype=np.float64) + self.shift
        if clamp:
            out = np.clip(out, CALIBRATION_CLAMP, 1.0 - CALIBRATION_CLAMP)
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate(scores, reference_mean: float, reference_std: float):
    """Affine map matching the scores' mean and population std to the references.

    Returns ``(calibrated_scores, CalibrationParams)``; the output is clamped
    to ``[1e-6, 1 - 1e-6]`` and ``params.clamped`` counts clamped scores.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise DataError("cannot calibrate an empty score set")
    if not reference_std > 0:
        raise DataError("reference_std must be positive")
    sd = float(np.std(s))
    if sd == 0:
        raise DataError("variant scores have zero variance; calibration is undefined")
    a = reference_std / sd
    b = reference_mean - a * float(np.mean(s))
    params = CalibrationParams(a, b, float(reference_mean), float(reference_std))
    raw = params.apply(s, clamp=False)
    out = params.apply(s)
    params.clamped = int(np.count_nonzero(out != raw))
    return out, params


def slice_masks(impressions, partition: PartitionConfig) -> dict:
    warm = warm_mask(impressions, partition)
    return {"mixed": np.ones(warm.size, dtype=bool), "cold": ~warm, "warm": warm}


def prepare_training(log: ClickLog, window: WindowConfig):
    """Split, subsample and wrap the training window; returns ``(TrainingSet, valid_log)``."""
    train, valid, listing_imps = split_window(log, window)
    rows, weights = subsample_negatives(train.labels, window.negative_sample_rate, window.sample_seed)
    return TrainingSet(train, rows, weights, listing_imps), valid


@dataclass
class ExperimentResult:
    reports: dict
    deltas: dict
    bundles: dict
    calibration: dict
    training_base_rate: float
    baseline: str
    scores: dict = field(default_factory=dict, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)
    slices: dict = field(default_factory=dict, repr=False)

    def table(self) -> str:
        return metrics.format_table(self.deltas, self.baseline)

    def to_dict(self) -> dict:
        return {"baseline": self.baseline, "training_base_rate": self.training_base_rate,
                "reports": {v: {s: r.to_dict() for s, r in rep.items()} for v, rep in self.reports.items()},
                "deltas": self.deltas,
                "calibration": {v: p.to_dict() for v, p in self.calibration.items()},
                "model_digests": {v: b.digest() for v, b in self.bundles.items()}}


def score_and_report(bundles: dict, valid: ClickLog, partition: PartitionConfig, baseline: str,
                     base_rate: float | None = None, ne_denominator: str = "entropy",
                     threads: int = 1) -> ExperimentResult:
    """Score the validation rows, calibrate to the baseline's moments, slice and evaluate.

    ``base_rate=None`` normalises each variant's NE by its own training base rate.
    """
    if len(valid) == 0:
        raise DataError("no validation rows")
    if baseline not in bundles:
        raise DataError(f"baseline variant {baseline!r} not among {sorted(bundles)}")
    with ThreadPoolExecutor(max(1, threads)) as ex:
        raw = dict(zip(bundles, ex.map(lambda b: b.score(valid), bundles.values())))
    ref = raw[baseline]
    ref_mean, ref_std = float(np.mean(ref)), float(np.std(ref))
    labels = valid.labels.astype(np.float64)
    masks = slice_masks(valid.impressions, partition)
    reports, calib, calibrated = {}, {}, {}
    for name, s in raw.items():
        calibrated[name], calib[name] = calibrate(s, ref_mean, ref_std)
        rate = bundles[name].training_base_rate if base_rate is None else base_rate
        reports[name] = metrics.evaluate(calibrated[name], labels, masks, rate,
                                         denominator=ne_denominator, chunks=max(1, threads))
    return ExperimentResult(reports, metrics.compare(reports, baseline), bundles, calib,
                            float("nan") if base_rate is None else base_rate, baseline,
                            scores=calibrated, labels=labels, slices=masks)


def train_variants(variants, ts: TrainingSet, partition: PartitionConfig, threads: int = 1) -> dict:
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate variant names in {names}")
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            bundles = list(ex.map(lambda v: train_variant(v, ts, partition, 1), variants))
    else:
        bundles = [train_variant(v, ts, partition, 1) for v in variants]
    return dict(zip(names, bundles))


def run_experiment(log: ClickLog, window: WindowConfig | None = None, variants=None,
                   partition: PartitionConfig | None = None, baseline: str = "baseline",
                   threads: int = 1, ne_base_rate: str = "window",
                   ne_denominator: str = "entropy") -> ExperimentResult:
    """Train every variant on the window, evaluate on the validation day.

    ``ne_base_rate="window"`` normalises every variant's NE by the training
    window's (importance-weighted) positive rate; ``"variant"`` uses the rate
    of the rows each variant was trained on.
    """
    window = window or WindowConfig(default_anchor(log))
    variants = list(variants) if variants is not None else default_variants()
    partition = partition or PartitionConfig()
    if ne_base_rate not in ("window", "variant"):
        raise ValueError(f"unknown ne_base_rate {ne_base_rate!r}")
    ts, valid = prepare_training(log, window)
    bundles = train_variants(variants, ts, partition, threads)
    rate = ts.base_rate if ne_base_rate == "window" else None
    return score_and_report(bundles, valid, partition, baseline, rate, ne_denominator, threads)
