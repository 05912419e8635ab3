"""Model variants (listing-id baseline, historical, content-based, ensemble) and their bundle file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import batches, ensemble
from .errors import ConfigError, DataError
from .features import RESERVED_DIM, ContentConfig, HashConfig
from .learner import FtrlHyperparams, FtrlModel
from .logs import ClickLog
from .smoothing import SmoothingPrior

KINDS = ("baseline", "historical", "content", "ensemble")
ROLES = {"baseline": ("baseline",), "historical": ("historical",), "content": ("content",),
         "ensemble": ("historical", "content", "stacker")}
BUNDLE_FORMAT = "ctrstack-bundle"
BUNDLE_VERSION = 1

DEFAULT_HYPER = {
    "baseline": FtrlHyperparams(),
    "historical": FtrlHyperparams(),
    "content": FtrlHyperparams(),
    "stacker": FtrlHyperparams(),
}


@dataclass
class VariantSpec:
    name: str
    kind: str
    hyper: dict = field(default_factory=dict)
    families: tuple = ("clicks",)
    historical_transform: str = "logit"
    content: ContentConfig = field(default_factory=ContentConfig)
    id_hash: HashConfig = field(default_factory=HashConfig)
    stacking: str = "oof"
    n_folds: int = 2
    fold_seed: int = 0
    fold_by: str = "row"
    smoothing_factor: float = 0.3
    beta_convention: str = "impressions"
    prior_aggregation: str = "cumulative"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown variant kind {self.kind!r}; expected one of {KINDS}")
        hyper = {}
        for role in ROLES[self.kind]:
            h = self.hyper.get(role, DEFAULT_HYPER[role])
            hyper[role] = h if isinstance(h, FtrlHyperparams) else FtrlHyperparams(**h)
        extra = set(self.hyper) - set(hyper)
        if extra:
            raise ConfigError(f"variant {self.name!r}: hyperparameters for unused roles {sorted(extra)}")
        self.hyper = hyper
        self.families = tuple(self.families)
        if "clicks" not in self.families:
            raise ConfigError("historical features need the clicks family")
        if self.stacking not in ("oof", "in_sample"):
            raise ConfigError(f"unknown stacking mode {self.stacking!r}")
        if self.prior_aggregation not in batches.AGGREGATIONS:
            raise ConfigError(f"unknown prior_aggregation {self.prior_aggregation!r}")
        if self.fold_by not in ensemble.FOLD_UNITS:
            raise ConfigError(f"unknown fold_by {self.fold_by!r}")
        if self.n_folds < 2:
            raise ConfigError("n_folds must be at least 2")

    @classmethod
    def from_dict(cls, d: dict) -> "VariantSpec":
        d = dict(d)
        try:
            if "content" in d and not isinstance(d["content"], ContentConfig):
                d["content"] = ContentConfig.from_dict(d["content"])
            if "id_hash" in d and not isinstance(d["id_hash"], HashConfig):
                d["id_hash"] = HashConfig(**d["id_hash"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid variant spec: {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "hyper": {r: h.to_dict() for r, h in self.hyper.items()},
                "families": list(self.families), "historical_transform": self.historical_transform,
                "content": self.content.to_dict(),
                "id_hash": {"dimension_bits": self.id_hash.dimension_bits, "seed": self.id_hash.seed,
                            "use_sign_hash": self.id_hash.use_sign_hash},
                "stacking": self.stacking, "n_folds": self.n_folds, "fold_seed": self.fold_seed, "fold_by": self.fold_by,
                "smoothing_factor": self.smoothing_factor, "beta_convention": self.beta_convention,
                "prior_aggregation": self.prior_aggregation}


def default_variants() -> list:
    return [VariantSpec("baseline", "baseline"), VariantSpec("historical", "historical"),
            VariantSpec("content", "content"), VariantSpec("ensemble", "ensemble")]


@dataclass
class TrainingSet:
    """Training-window rows plus the subsample actually fed to the learners.

    ``window_log`` has counters recomputed from the window; ``rows`` and
    ``weights`` describe the negative-subsampled training rows;
    ``listing_impressions`` is each listing's window impression count.
    """

    window_log: ClickLog
    rows: np.ndarray
    weights: np.ndarray
    listing_impressions: np.ndarray

    @cached_property
    def log(self) -> ClickLog:
        return self.window_log.take(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return self.log.labels.astype(np.float64)

    @property
    def base_rate(self) -> float:
        y = self.labels
        return float(np.sum(self.weights * y) / np.sum(self.weights))

    def row_warm(self, k: int) -> np.ndarray:
        return self.listing_impressions[self.log.row_listing] >= k


@dataclass
class ModelBundle:
    name: str
    kind: str
    models: dict
    partition: ensemble.PartitionConfig
    training_base_rate: float
    spec: VariantSpec
    priors: dict = field(default_factory=dict)

    def score(self, log: ClickLog) -> np.ndarray:
        if len(log) == 0:
            return np.zeros(0)
        s = self.spec
        if self.kind == "baseline":
            return self.models["baseline"].predict_batch(batches.id_rows(log, s.id_hash))
        if self.kind == "historical":
            return self.models["historical"].predict_batch(
                batches.historical_rows(log, self.priors, s.historical_transform))
        if self.kind == "content":
            return self.models["content"].predict_batch(batches.content_rows(log, s.content))
        return ensemble.predict_ensemble(self.models, log, self.priors, s.content,
                                         s.historical_transform)

    def to_dict(self) -> dict:
        return {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "name": self.name,
                "kind": self.kind, "spec": self.spec.to_dict(),
                "partition": {"k": self.partition.k},
                "training_base_rate": float.hex(self.training_base_rate),
                "priors": {f: p.to_dict() for f, p in self.priors.items()},
                "models": {r: m.to_dict() for r, m in self.models.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT:
            raise DataError("not a model bundle")
        if d.get("version") != BUNDLE_VERSION:
            raise DataError(f"unsupported bundle version {d.get('version')}")
        return cls(d["name"], d["kind"], {r: FtrlModel.from_dict(m) for r, m in d["models"].items()},
                   ensemble.PartitionConfig(**d["partition"]), float.fromhex(d["training_base_rate"]),
                   VariantSpec.from_dict(d["spec"]),
                   {f: SmoothingPrior.from_dict(p) for f, p in d["priors"].items()})

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed model bundle ({exc})") from None


def train_variant(spec: VariantSpec, ts: TrainingSet, partition: ensemble.PartitionConfig,
                  threads: int = 1) -> ModelBundle:
    log = ts.log
    if len(log) == 0:
        raise DataError(f"variant {spec.name!r}: no training rows")
    labels, weights = ts.labels, ts.weights
    priors = {}
    if spec.kind in ("historical", "ensemble"):
        priors = batches.fit_priors(ts.window_log, spec.families, spec.smoothing_factor,
                                    spec.beta_convention, spec.prior_aggregation)
    if spec.kind == "baseline":
        m = FtrlModel(spec.id_hash.dimension, spec.hyper["baseline"])
        m.fit(batches.id_rows(log, spec.id_hash), labels, weights)
        models = {"baseline": m}
        rows = np.arange(len(log))
    elif spec.kind == "historical":
        rows = np.flatnonzero(ts.row_warm(partition.k))
        if rows.size == 0:
            raise DataError(f"variant {spec.name!r}: empty warm partition")
        m = FtrlModel(RESERVED_DIM, spec.hyper["historical"])
        m.fit(batches.historical_rows(log, priors, spec.historical_transform).take(rows),
              labels[rows], weights[rows])
        models = {"historical": m}
    elif spec.kind == "content":
        rows = np.flatnonzero(~ts.row_warm(partition.k))
        if rows.size == 0:
            raise DataError(f"variant {spec.name!r}: empty cold partition")
        m = FtrlModel(spec.content.dimension, spec.hyper["content"])
        m.fit(batches.content_rows(log, spec.content).take(rows), labels[rows], weights[rows])
        models = {"content": m}
    else:
        models = ensemble.train_ensemble(log, weights, ts.listing_impressions, partition, spec.hyper,
                                         priors, spec.content, spec.historical_transform,
                                         spec.stacking, spec.n_folds, spec.fold_seed, threads,
                                         spec.fold_by, ts.rows)
        rows = np.arange(len(log))
    base_rate = float(np.sum(weights[rows] * labels[rows]) / np.sum(weights[rows]))
    return ModelBundle(spec.name, spec.kind, models, partition, base_rate, spec, priors)
