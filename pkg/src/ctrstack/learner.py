"""Sparse logistic regression trained with per-coordinate FTRL-Proximal."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .sparse import FeatureBatch, SparseVector

EPS = 1e-15
MODEL_FORMAT = "ctrstack-ftrl"
MODEL_VERSION = 1


@dataclass(frozen=True)
class FtrlHyperparams:
    lr_alpha: float = 0.1
    lr_beta: float = 1.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    epochs: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        if not self.lr_alpha > 0:
            raise ValueError("lr_alpha must be positive")
        if self.lr_beta < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lr_beta, lambda1 and lambda2 must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FtrlHyperparams":
        return cls(**d)


def sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def log_loss_gradient(w, x, label):
    """Analytic gradient of the logistic loss with respect to ``w`` (dense)."""
    p = 1.0 / (1.0 + math.exp(-float(np.dot(w, x))))
    return (p - label) * np.asarray(x, dtype=np.float64)


class FtrlModel:
    """Per-coordinate FTRL-Proximal state; weights are materialised lazily.

    ``z`` and ``n`` are stored densely over ``dimension`` coordinates; an
    untouched coordinate has ``z = n = 0`` and weight 0.
    """

    def __init__(self, dimension: int, hyper: FtrlHyperparams | None = None):
        self.dimension = int(dimension)
        self.hyper = hyper or FtrlHyperparams()
        self.z = np.zeros(self.dimension)
        self.n = np.zeros(self.dimension)

    def copy(self) -> "FtrlModel":
        m = FtrlModel(self.dimension, self.hyper)
        m.z = self.z.copy()
        m.n = self.n.copy()
        return m

    def _args(self):
        h = self.hyper
        return h.lr_alpha, h.lr_beta, h.lambda1, h.lambda2

    def weight(self, i: int) -> float:
        if not 0 <= i < self.dimension:
            raise IndexError(f"coordinate {i} outside dimension {self.dimension}")
        a, b, l1, l2 = self._args()
        zi = self.z[i]
        if abs(zi) <= l1:
            return 0.0
        return float(-(zi - math.copysign(l1, zi)) / ((b + math.sqrt(self.n[i])) / a + l2))

    def weights(self) -> np.ndarray:
        return kernels.closed_form_weights(self.z, self.n, *self._args())

    def nonzero_weights(self) -> int:
        return int(np.count_nonzero(self.weights()))

    def _check_dim(self, dim):
        if dim != self.dimension:
            raise ValueError(f"feature dimension {dim} does not match model dimension {self.dimension}")

    def predict(self, x: SparseVector) -> float:
        return float(self.predict_batch(FeatureBatch.from_vectors([x], x.dim))[0])

    def predict_batch(self, batch: FeatureBatch) -> np.ndarray:
        self._check_dim(batch.dim)
        if len(batch) == 0:
            return np.zeros(0)
        return kernels.predict_rows(self.weights(), batch.indptr, batch.indices, batch.values,
                                    batch.row_block, batch.dense, batch.row_dense,
                                    batch.dense_offset, EPS)

    def train_step(self, x: SparseVector, label: int, weight: float = 1.0) -> "FtrlModel":
        if not weight > 0:
            raise ValueError("importance weight must be positive")
        self._fit_pass(FeatureBatch.from_vectors([x], x.dim), np.array([float(label)]),
                       np.array([float(weight)]), np.zeros(1, dtype=np.int64))
        return self

    def _fit_pass(self, batch, labels, weights, order):
        loss, wsum, bad = kernels.fit_rows(self.z, self.n, batch.indptr, batch.indices,
                                           batch.values, batch.row_block, batch.dense,
                                           batch.row_dense, batch.dense_offset, labels, weights,
                                           order, *self._args(), EPS)
        if bad >= 0:
            raise FloatingPointError(f"non-finite FTRL state after row {bad}")
        return loss, wsum

    def fit(self, batch: FeatureBatch, labels, weights=None) -> float:
        """Train on ``batch`` for ``hyper.epochs`` passes.

        A single epoch runs in row order; with several epochs each pass uses
        a permutation drawn from ``(shuffle_seed, epoch)``.  Returns the
        weighted progressive log loss of the final pass.
        """
        self._check_dim(batch.dim)
        labels = np.ascontiguousarray(labels, dtype=np.float64)
        if weights is None:
            weights = np.ones(len(batch))
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if labels.shape != (len(batch),) or weights.shape != (len(batch),):
            raise ValueError("labels/weights must have one entry per row")
        if np.any(weights <= 0):
            raise ValueError("importance weights must be positive")
        if not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be 0 or 1")
        if len(batch) == 0:
            return float("nan")
        loss = wsum = 0.0
        for epoch in range(self.hyper.epochs):
            if self.hyper.epochs == 1:
                order = np.arange(len(batch), dtype=np.int64)
            else:
                rng = np.random.default_rng([self.hyper.shuffle_seed & 0xFFFFFFFFFFFFFFFF, epoch])
                order = rng.permutation(len(batch)).astype(np.int64)
            loss, wsum = self._fit_pass(batch, labels, weights, order)
        return loss / wsum

    # --- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        touched = np.flatnonzero((self.z != 0) | (self.n != 0))
        return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "dimension": self.dimension,
                "hyper": self.hyper.to_dict(),
                "index": touched.tolist(),
                "z": [float.hex(v) for v in self.z[touched].tolist()],
                "n": [float.hex(v) for v in self.n[touched].tolist()]}

    @classmethod
    def from_dict(cls, d: dict) -> "FtrlModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not an FTRL model record")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        m = cls(d["dimension"], FtrlHyperparams.from_dict(d["hyper"]))
        idx = np.asarray(d["index"], dtype=np.int64)
        m.z[idx] = [float.fromhex(v) for v in d["z"]]
        m.n[idx] = [float.fromhex(v) for v in d["n"]]
        return m

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "FtrlModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train(model: FtrlModel, data):
    """Train on an iterable of ``(SparseVector, label, weight)`` rows.

    Returns ``(model, progressive_log_loss)``; the loss is NaN for an empty stream.
    """
    vecs, labels, weights = [], [], []
    for k, (x, y, w) in enumerate(data):
        if x.dim != model.dimension:
            raise ValueError(f"row {k}: dimension {x.dim} does not match model {model.dimension}")
        if not w > 0:
            raise ValueError(f"row {k}: importance weight must be positive")
        vecs.append(x)
        labels.append(y)
        weights.append(w)
    if not vecs:
        return model, float("nan")
    loss = model.fit(FeatureBatch.from_vectors(vecs, model.dimension), labels, weights)
    return model, loss
