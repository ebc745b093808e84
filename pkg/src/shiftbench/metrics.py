"""Accuracy, calibration, and uncertainty metrics.

Conventions, fixed across the toolkit:
  * predicted class = argmax of the probability row; ties go to the
    lowest class index (numpy argmax order).
  * Brier score is the one-sided mean (1 - p_correct)^2. The full
    multiclass sum-of-squares variant is available behind a flag and is
    NOT what the benchmark tables report.
  * ECE uses equal-mass buckets over confidence = max probability:
    samples sorted by confidence (stable, so ties stay adjacent), bucket
    sizes differ by at most one with the extra items in the
    lowest-confidence buckets.
  * predictive entropy uses natural log with 0 * log 0 = 0; it lies in
    [0, ln K].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError


def _check_probs_labels(probs, labels):
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ConfigError("probs must be a non-empty (n, K) array")
    if y.shape != (p.shape[0],):
        raise ConfigError("labels must be 1-D with one entry per row of probs")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= p.shape[1]:
        raise ConfigError(f"labels outside 0..{p.shape[1] - 1}")
    return p, y


def accuracy(probs, labels) -> float:
    p, y = _check_probs_labels(probs, labels)
    return float(np.mean(np.argmax(p, axis=1) == y))


def brier(probs, labels, multiclass: bool = False) -> float:
    """One-sided Brier score: mean (1 - p assigned to the true class)^2.

    With multiclass=True returns the full sum-of-squares variant
    mean sum_k (p_k - onehot_k)^2 instead (range [0, 2]).
    """
    p, y = _check_probs_labels(probs, labels)
    if multiclass:
        onehot = np.zeros_like(p)
        onehot[np.arange(len(y)), y] = 1.0
        return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))
    return float(np.mean((1.0 - p[np.arange(len(y)), y]) ** 2))


@dataclass(frozen=True)
class CalibrationBuckets:
    """Per-bucket reliability table backing an ECE value."""

    sizes: np.ndarray
    conf_lo: np.ndarray
    conf_hi: np.ndarray
    accuracies: np.ndarray
    confidences: np.ndarray

    def rows(self):
        for i in range(len(self.sizes)):
            yield (
                i,
                float(self.conf_lo[i]),
                float(self.conf_hi[i]),
                int(self.sizes[i]),
                float(self.accuracies[i]),
                float(self.confidences[i]),
                float(abs(self.accuracies[i] - self.confidences[i])),
            )


def ece(probs, labels, num_buckets: int = 10, binning: str = "quantile") -> tuple[float, CalibrationBuckets]:
    """Expected calibration error with its bucket table.

    binning "quantile" (default): equal-mass buckets as described in the
    module docstring. binning "width": fixed-width confidence bins over
    [0, 1]; empty bins contribute nothing and appear with size 0.
    """
    p, y = _check_probs_labels(probs, labels)
    n = len(y)
    if num_buckets < 1:
        raise ConfigError("num_buckets must be at least 1")
    if binning not in ("quantile", "width"):
        raise ConfigError(f"binning must be 'quantile' or 'width', got {binning!r}")
    if binning == "quantile" and n < num_buckets:
        raise ConfigError(f"need at least {num_buckets} samples for {num_buckets} quantile buckets")

    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == y).astype(np.float64)

    sizes = np.zeros(num_buckets, dtype=np.int64)
    lo = np.zeros(num_buckets)
    hi = np.zeros(num_buckets)
    acc = np.zeros(num_buckets)
    cbar = np.zeros(num_buckets)

    if binning == "quantile":
        order = np.argsort(conf, kind="stable")
        base, extra = divmod(n, num_buckets)
        start = 0
        for i in range(num_buckets):
            size = base + (1 if i < extra else 0)
            idx = order[start : start + size]
            start += size
            sizes[i] = size
            lo[i] = conf[idx].min()
            hi[i] = conf[idx].max()
            acc[i] = correct[idx].mean()
            cbar[i] = conf[idx].mean()
    else:
        edges = np.linspace(0.0, 1.0, num_buckets + 1)
        which = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, num_buckets - 1)
        for i in range(num_buckets):
            idx = np.flatnonzero(which == i)
            sizes[i] = len(idx)
            lo[i], hi[i] = edges[i], edges[i + 1]
            if len(idx):
                acc[i] = correct[idx].mean()
                cbar[i] = conf[idx].mean()

    gap = np.abs(acc - cbar)
    value = float(np.sum(sizes / n * gap))
    return value, CalibrationBuckets(sizes, lo, hi, acc, cbar)


def predictive_entropy(probs):
    """Entropy of each distribution in nats; scalar for 1-D input."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1) + 0.0  # normalize -0.0 from all-zero terms
    return float(h) if p.ndim == 1 else h


def mean_uncertainty(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ConfigError("mean_uncertainty needs a non-empty (n, K) array")
    return float(np.mean(predictive_entropy(p)))


def tpr_tnr(probs, labels) -> tuple[float, float]:
    """True positive and true negative rates for binary tasks (class 1 =
    positive). Requires both classes present."""
    p, y = _check_probs_labels(probs, labels)
    if p.shape[1] != 2:
        raise ConfigError("tpr_tnr is defined for two-class problems only")
    pred = np.argmax(p, axis=1)
    pos = y == 1
    neg = y == 0
    if not pos.any() or not neg.any():
        raise ConfigError("tpr_tnr needs at least one sample of each class")
    tpr = float(np.mean(pred[pos] == 1))
    tnr = float(np.mean(pred[neg] == 0))
    return tpr, tnr


class SelectivePoint(NamedTuple):
    threshold: float
    retained_fraction: float
    accuracy: float | None


def selective_prediction_curve(probs, labels, thresholds) -> list[SelectivePoint]:
    """Accuracy over the subset with entropy <= threshold, per threshold.

    An empty retained set yields retained_fraction 0 and accuracy None.
    """
    p, y = _check_probs_labels(probs, labels)
    h = predictive_entropy(p)
    pred = np.argmax(p, axis=1)
    out = []
    for tau in thresholds:
        keep = h <= tau
        frac = float(np.mean(keep))
        if not keep.any():
            out.append(SelectivePoint(float(tau), 0.0, None))
        else:
            out.append(SelectivePoint(float(tau), frac, float(np.mean(pred[keep] == y[keep]))))
    return out


def shift_detection_accuracy(probs_orig, probs_shifted, threshold: float) -> float:
    """Accuracy of 'shifted iff entropy > threshold' on the mixed pool of
    original and shifted predictions."""
    po = np.asarray(probs_orig, dtype=np.float64)
    ps = np.asarray(probs_shifted, dtype=np.float64)
    if po.ndim != 2 or ps.ndim != 2 or po.shape[0] < 1 or ps.shape[0] < 1:
        raise ConfigError("both prediction sets must be non-empty (n, K) arrays")
    h_o = predictive_entropy(po)
    h_s = predictive_entropy(ps)
    correct = int(np.sum(h_o <= threshold)) + int(np.sum(h_s > threshold))
    return correct / (len(h_o) + len(h_s))


def shift_detection_sweep(probs_orig, probs_shifted, thresholds) -> list[tuple[float, float]]:
    return [(float(t), shift_detection_accuracy(probs_orig, probs_shifted, float(t))) for t in thresholds]


def entropy_histogram(probs, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Counts of predictive entropies in equal-width bins over [0, ln K].

    Every sample lands in some bin (values at ln K go to the last one),
    so the counts sum to n.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ConfigError("entropy_histogram needs a non-empty (n, K) array")
    if bins < 1:
        raise ConfigError("bins must be at least 1")
    h_max = math.log(p.shape[1])
    h = np.clip(predictive_entropy(p), 0.0, h_max)
    counts, edges = np.histogram(h, bins=bins, range=(0.0, h_max))
    return counts, edges


@dataclass(frozen=True)
class MetricsReport:
    """One cell of the benchmark matrix."""

    method: str
    shift_kind: str
    degree: int
    accuracy: float
    brier: float
    ece: float
    mean_uncertainty: float
    tpr: float | None
    tnr: float | None
    n_samples: int
