"""Cold/warm partitioning and the logistic stacker over base-model scores.

The stacker sees ``[bias, logit(historical), logit(content),
floor(ln(1 + impressions))]`` at fixed indices of a small reserved space.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import batches, features
from .errors import DataError
from .learner import FtrlHyperparams, FtrlModel
from .sparse import FeatureBatch, SparseVector

STACK_BIAS = 0
STACK_HISTORICAL = 1
STACK_CONTENT = 2
STACK_IMPRESSIONS = 3
STACK_DIM = features.RESERVED_DIM


@dataclass(frozen=True)
class PartitionConfig:
    k: int = 30

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("impression threshold k must be at least 1")


def warm_mask(impressions, cfg: PartitionConfig) -> np.ndarray:
    return np.asarray(impressions) >= cfg.k


def partition(records, cfg: PartitionConfig) -> dict:
    """Split records into ``cold`` (< k impressions) and ``warm`` (>= k)."""
    out = {"cold": [], "warm": []}
    for rec in records:
        out["warm" if rec.impressions >= cfg.k else "cold"].append(rec)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p) - np.log1p(-p)
    return float(out) if out.ndim == 0 else out


def stack_batch(historical_scores, content_scores, impressions) -> FeatureBatch:
    cols = [(STACK_BIAS, np.ones(len(historical_scores))),
            (STACK_HISTORICAL, logit(historical_scores)),
            (STACK_CONTENT, logit(content_scores)),
            (STACK_IMPRESSIONS, features.ensemble_impression_features(impressions))]
    return features._fixed_width_batch(cols, len(historical_scores), STACK_DIM)


def stack_vector(historical_score, content_score, impressions) -> SparseVector:
    b = stack_batch(np.array([historical_score]), np.array([content_score]), np.array([impressions]))
    return b.row(0)


def train_stacker(historical_scores, content_scores, impressions, labels, weights=None,
                  hyper: FtrlHyperparams | None = None) -> FtrlModel:
    model = FtrlModel(STACK_DIM, hyper or FtrlHyperparams())
    model.fit(stack_batch(historical_scores, content_scores, impressions), labels, weights)
    return model


@dataclass
class BaseModels:
    historical: FtrlModel
    content: FtrlModel


FOLD_UNITS = ("row", "listing")


def fold_of(listing_ids, n_folds: int, seed: int) -> np.ndarray:
    """Fold of each listing, from a keyed hash of its id."""
    return np.array([features.hash_token(f"fold:{lid}", seed) % n_folds for lid in listing_ids],
                    dtype=np.int64)


def row_folds(row_ids, n_folds: int, seed: int) -> np.ndarray:
    """Fold of each row, from counter-based uniforms over its stable id.

    The stream key is salted so folds stay independent of negative
    subsampling, which draws from the same generator over the same ids.
    """
    u = features.row_uniform(features.hash_token(f"fold-seed:{seed}", 0), np.asarray(row_ids))
    return np.minimum((u * n_folds).astype(np.int64), n_folds - 1)


def _fit(dim, hyper, batch, rows, labels, weights, what):
    if rows.size == 0:
        raise DataError(f"empty {what} partition: cannot train the {what.split()[0]} model")
    m = FtrlModel(dim, hyper)
    m.fit(batch.take(rows), labels[rows], weights[rows])
    return m


def train_base_models(hist_batch, content_batch, labels, weights, warm, rows,
                      hist_hyper, content_hyper, threads=1, label="") -> BaseModels:
    """Historical model on the warm subset of ``rows``, content model on the cold subset."""
    hist_rows = rows[warm[rows]]
    cont_rows = rows[~warm[rows]]
    jobs = [(hist_batch.dim, hist_hyper, hist_batch, hist_rows, labels, weights, f"historical (warm{label})"),
            (content_batch.dim, content_hyper, content_batch, cont_rows, labels, weights, f"content (cold{label})")]
    if threads > 1:
        with ThreadPoolExecutor(2) as ex:
            futs = [ex.submit(_fit, *j) for j in jobs]
            hist, cont = [f.result() for f in futs]
    else:
        hist, cont = [_fit(*j) for j in jobs]
    return BaseModels(hist, cont)


def stacking_scores(hist_batch, content_batch, labels, weights, warm, fold, hist_hyper,
                    content_hyper, mode="oof", threads=1):
    """Base-model scores on every training row for fitting the stacker.

    ``mode="oof"`` scores each fold with base models trained on the other
    folds; ``mode="in_sample"`` scores with models trained on all rows.
    """
    n = labels.size
    hs = np.empty(n)
    cs = np.empty(n)
    all_rows = np.arange(n)
    if mode == "in_sample":
        m = train_base_models(hist_batch, content_batch, labels, weights, warm, all_rows,
                              hist_hyper, content_hyper, threads)
        return m.historical.predict_batch(hist_batch), m.content.predict_batch(content_batch)
    if mode != "oof":
        raise ValueError(f"unknown stacking mode {mode!r}")
    for f in np.unique(fold):
        held = all_rows[fold == f]
        m = train_base_models(hist_batch, content_batch, labels, weights, warm, all_rows[fold != f],
                              hist_hyper, content_hyper, threads, label=f", fold {f}")
        hs[held] = m.historical.predict_batch(hist_batch.take(held))
        cs[held] = m.content.predict_batch(content_batch.take(held))
    return hs, cs


def build_ensemble_row(rec, historical_model: FtrlModel, content_model: FtrlModel, priors: dict,
                       content_cfg=None, historical_transform: str = "logit"):
    """Stacker input for one record and its label."""
    x_hist = features.build_historical_features(rec, priors, historical_transform)
    x_cont = features.build_content_features(rec, content_cfg or features.ContentConfig()).combined
    hs = historical_model.predict(x_hist)
    cs = content_model.predict(x_cont)
    return stack_vector(hs, cs, rec.impressions), rec.label


def train_ensemble(log, weights, listing_impressions, cfg: PartitionConfig, hyper: dict, priors: dict,
                   content_cfg: features.ContentConfig, historical_transform="logit",
                   stacking="oof", n_folds=2, fold_seed=0, threads=1, fold_by="row",
                   row_ids=None) -> dict:
    """Train historical (warm), content (cold) and stacker (all rows) models.

    ``hyper`` maps ``historical``/``content``/``stacker`` to
    :class:`FtrlHyperparams`.  ``listing_impressions`` holds each listing's
    training-window impression count and decides cold/warm; the stacker's
    impression feature uses each row's counter.  Out-of-fold scores hold out
    rows (``fold_by="row"``, keyed by ``row_ids``) or whole listings
    (``"listing"``).
    """
    labels = log.labels.astype(np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    warm = warm_mask(np.asarray(listing_impressions)[log.row_listing], cfg)
    hb = batches.historical_rows(log, priors, historical_transform)
    cb = batches.content_rows(log, content_cfg)
    if fold_by == "row":
        fold = row_folds(np.arange(labels.size) if row_ids is None else row_ids, n_folds, fold_seed)
    elif fold_by == "listing":
        fold = fold_of(log.listing_ids, n_folds, fold_seed)[log.row_listing]
    else:
        raise ValueError(f"unknown fold unit {fold_by!r}")
    hs, cs = stacking_scores(hb, cb, labels, weights, warm, fold, hyper["historical"],
                             hyper["content"], stacking, threads)
    final = train_base_models(hb, cb, labels, weights, warm, np.arange(labels.size),
                              hyper["historical"], hyper["content"], threads)
    stacker = train_stacker(hs, cs, log.impressions, labels, weights, hyper["stacker"])
    return {"historical": final.historical, "content": final.content, "stacker": stacker}


def predict_ensemble(models: dict, log, priors: dict, content_cfg, historical_transform="logit"):
    hs = models["historical"].predict_batch(batches.historical_rows(log, priors, historical_transform))
    cs = models["content"].predict_batch(batches.content_rows(log, content_cfg))
    return models["stacker"].predict_batch(stack_batch(hs, cs, log.impressions))
