"""Metrics and paired significance testing."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import LabelOutOfRange, TooFewPairs


def confusion_matrix(preds, labels, k: int) -> np.ndarray:
    """``k x k`` counts; rows are true classes, columns predictions."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ValueError(f"{preds.shape} predictions vs {labels.shape} labels")
    for name, v in (("label", labels), ("prediction", preds)):
        if v.size and (v.min() < 0 or v.max() >= k):
            raise LabelOutOfRange(f"{name} outside [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else float("nan")


def mean_sd(values) -> tuple[float, float]:
    """Mean and unbiased (n - 1) standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    sd = float(v.std(ddof=1)) if v.size > 1 else float("nan")
    return float(v.mean()), sd


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float   # min(W+, W-)
    pvalue: float      # two-sided
    n: int             # non-zero differences
    method: str        # "exact" or "normal"


def _doubled_ranks(d: np.ndarray) -> np.ndarray:
    # average ranks are multiples of 1/2; doubling makes them integers
    return np.rint(2 * rankdata(np.abs(d))).astype(np.int64)


def exact_null_counts(doubled_ranks) -> np.ndarray:
    """Number of sign patterns giving each value of ``2 * W+``.

    Every sign assignment is equally likely under the null; this is the
    subset-sum count over the doubled ranks.
    """
    r = np.asarray(doubled_ranks, dtype=np.int64)
    counts = np.zeros(int(r.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for v in r:
        shifted = np.zeros_like(counts)
        shifted[v:] = counts[:len(counts) - v]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b, exact_max_n: int = 25, min_pairs: int = 5) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied magnitudes get average ranks.
    Up to ``exact_max_n`` non-zero pairs the p-value comes from the exact
    null distribution (tie-aware); above that, a normal approximation with
    tie-corrected variance and no continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D arrays of equal length")
    if len(a) < min_pairs:
        raise TooFewPairs(f"{len(a)} pairs, need at least {min_pairs}")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise TooFewPairs("all paired differences are zero")
    r2 = _doubled_ranks(d)
    w_plus2 = int(r2[d > 0].sum())
    w_minus2 = int(r2[d < 0].sum())
    t2 = min(w_plus2, w_minus2)
    if n <= exact_max_n:
        counts = exact_null_counts(r2)
        p = min(1.0, 2 * int(counts[:t2 + 1].sum()) / 2 ** n)
        return WilcoxonResult(t2 / 2, p, n, "exact")
    mean = n * (n + 1) / 4
    _, tie_sizes = np.unique(r2, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48
    z = (t2 / 2 - mean) / math.sqrt(var)
    return WilcoxonResult(t2 / 2, min(1.0, math.erfc(abs(z) / math.sqrt(2))), n, "normal")


def paired_by_sequence(preds_a: np.ndarray, preds_b: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sequence correctness rates (averaged over seeds) for two models.

    ``preds_*`` are ``(seeds, sequences)`` arrays. This is the alternative
    pairing unit to per-seed accuracies.
    """
    return (np.asarray(preds_a) == labels).mean(axis=0), (np.asarray(preds_b) == labels).mean(axis=0)
