"""Offline evaluation metrics: AUC, average impression log loss, normalized cross entropy.

All metrics accept importance weights.  :class:`MetricAccumulator` is
mergeable: partition examples any way, accumulate, merge, and the final
report is identical to a single pass because it is computed from a
canonically sorted copy of the data.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

CLAMP = 1e-15
SLICES = ("mixed", "cold", "warm")
# delta units against a baseline: AUC in percent, losses x 10^3
DELTA_SCALE = {"auc": 100.0, "avg_log_loss": 1e3, "normalized_cross_entropy": 1e3}


class ScoredExample(NamedTuple):
    score: float
    label: int
    slice: str = "mixed"
    weight: float = 1.0


def _columns(scores, labels=None, weights=None):
    if labels is None:
        examples = list(scores)
        scores = [e.score for e in examples]
        labels = [e.label for e in examples]
        weights = [e.weight for e in examples]
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if not (s.shape == y.shape == w.shape):
        raise ValueError("scores, labels and weights must have equal length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y, w


def _auc_sorted(s, y, w):
    """AUC from arrays already sorted by score (ascending)."""
    pos_total = float(np.sum(w * y))
    neg_total = float(np.sum(w * (1 - y)))
    if pos_total <= 0 or neg_total <= 0:
        return None
    starts = np.concatenate([[0], np.flatnonzero(np.diff(s)) + 1])
    pos = np.add.reduceat(w * y, starts)
    neg = np.add.reduceat(w * (1 - y), starts)
    below = np.cumsum(neg) - neg
    return float(np.sum(pos * (below + 0.5 * neg)) / (pos_total * neg_total))


def auc(scores, labels=None, weights=None):
    """Weighted Mann-Whitney AUC with ties counted half.

    Returns ``None`` (undefined) when only one class is present.
    """
    s, y, w = _columns(scores, labels, weights)
    order = np.lexsort((w, y, s))
    return _auc_sorted(s[order], y[order], w[order])


def _clip(s):
    return np.clip(s, CLAMP, 1.0 - CLAMP)


def avg_log_loss(scores, labels=None, weights=None) -> float:
    s, y, w = _columns(scores, labels, weights)
    if s.size == 0:
        raise ValueError("log loss of an empty set is undefined")
    p = _clip(s)
    ll = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(np.sum(w * ll) / np.sum(w))


def entropy(p: float) -> float:
    if not 0 < p < 1:
        raise ValueError(f"base rate must lie strictly between 0 and 1, got {p}")
    return -(p * math.log(p) + (1 - p) * math.log1p(-p))


def _ne_denominator(rate, denominator):
    if not 0 < rate < 1:
        raise ValueError(f"training base rate must lie strictly between 0 and 1, got {rate}")
    if denominator == "entropy":
        return entropy(rate)
    if denominator == "rate":
        return rate
    raise ValueError(f"unknown NE denominator {denominator!r}")


def normalized_cross_entropy(scores, labels=None, training_base_rate=None, weights=None,
                             denominator: str = "entropy") -> float:
    """Average log loss divided by the entropy of the training base rate.

    ``denominator="rate"`` divides by the raw rate instead.
    """
    if training_base_rate is None:
        raise ValueError("training_base_rate is required")
    d = _ne_denominator(training_base_rate, denominator)
    return avg_log_loss(scores, labels, weights) / d


@dataclass
class EvalReport:
    n: int
    positives: int
    negatives: int
    base_rate: float | None
    auc: float | None
    avg_log_loss: float | None
    normalized_cross_entropy: float | None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auc_defined"] = self.auc is not None
        return d


class MetricAccumulator:
    """Collects scored examples; ``merge`` combines partial accumulators exactly."""

    def __init__(self):
        self._parts = []

    def add(self, scores, labels, weights=None) -> "MetricAccumulator":
        s, y, w = _columns(scores, labels, weights)
        self._parts.append((s, y, w))
        return self

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        out = MetricAccumulator()
        out._parts = self._parts + other._parts
        return out

    def _canonical(self):
        if not self._parts:
            return np.zeros(0), np.zeros(0), np.zeros(0)
        s = np.concatenate([p[0] for p in self._parts])
        y = np.concatenate([p[1] for p in self._parts])
        w = np.concatenate([p[2] for p in self._parts])
        order = np.lexsort((w, y, s))
        return s[order], y[order], w[order]

    def report(self, training_base_rate: float, denominator: str = "entropy") -> EvalReport:
        s, y, w = self._canonical()
        n = int(s.size)
        npos = int(np.sum(y))
        if n == 0:
            return EvalReport(0, 0, 0, None, None, None, None)
        d = _ne_denominator(training_base_rate, denominator)
        p = _clip(s)
        ll = float(np.sum(w * -(y * np.log(p) + (1 - y) * np.log1p(-p))) / np.sum(w))
        return EvalReport(n=n, positives=npos, negatives=n - npos,
                          base_rate=float(np.sum(w * y) / np.sum(w)),
                          auc=_auc_sorted(s, y, w), avg_log_loss=ll,
                          normalized_cross_entropy=ll / d)


def evaluate(scores, labels, slices: dict, training_base_rate: float, weights=None,
             denominator: str = "entropy", chunks: int = 1) -> dict:
    """One :class:`EvalReport` per named boolean slice mask.

    ``chunks > 1`` accumulates each slice in contiguous partitions and merges
    them; the result does not depend on ``chunks``.
    """
    s, y, w = _columns(scores, labels, weights)
    out = {}
    for name, mask in slices.items():
        idx = np.flatnonzero(np.asarray(mask, dtype=bool))
        acc = MetricAccumulator()
        for part in np.array_split(idx, max(1, chunks)):
            acc = acc.merge(MetricAccumulator().add(s[part], y[part], w[part]))
        out[name] = acc.report(training_base_rate, denominator)
    return out


def delta(report: EvalReport, baseline: EvalReport) -> dict:
    """Metric changes versus ``baseline`` (AUC in percent, losses x 10^3); ``None`` where undefined."""
    out = {}
    for metric, scale in DELTA_SCALE.items():
        a, b = getattr(report, metric), getattr(baseline, metric)
        out[metric] = None if a is None or b is None else (a - b) * scale
    return out


def compare(reports: dict, baseline: str) -> dict:
    """``{variant: {slice: {metric: delta}}}``, baseline included (all zeros)."""
    if baseline not in reports:
        raise KeyError(f"baseline {baseline!r} not among evaluated variants")
    base = reports[baseline]
    return {name: {sl: delta(rep[sl], base[sl]) for sl in rep if sl in base}
            for name, rep in reports.items()}


_ROW_LABELS = {"auc": "AUC (%)", "avg_log_loss": "Log Loss (x10^3)",
               "normalized_cross_entropy": "NE (x10^3)"}


def format_table(deltas: dict, baseline: str | None = None) -> str:
    """Render deltas as a metric-by-(variant, slice) text table."""
    variants = [v for v in deltas if v != baseline]
    slices = [s for s in SLICES if all(s in deltas[v] for v in variants)]
    head1 = "".ljust(18) + "".join(v[:8 * len(slices)].center(9 * len(slices)) for v in variants)
    head2 = "".ljust(18) + "".join(s.rjust(9) for _ in variants for s in slices)
    lines = [head1.rstrip(), head2]
    for metric, label in _ROW_LABELS.items():
        cells = []
        for v in variants:
            for s in slices:
                x = deltas[v][s][metric]
                cells.append("undef".rjust(9) if x is None else f"{x:+9.3f}")
        lines.append(label.ljust(18) + "".join(cells))
    return "\n".join(lines) + "\n"
