import itertools

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from fabrictouch.errors import LabelOutOfRange, TooFewPairs
from fabrictouch.stats import accuracy_from_confusion, confusion_matrix, mean_sd, wilcoxon_signed_rank


def average_ranks(values):
    """Plain-Python tie-averaged ranks, 1-based."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def brute_force(a, b):
    """Statistic and two-sided p by enumerating all sign patterns."""
    d = [x - y for x, y in zip(a, b) if x != y]
    ranks = average_ranks([abs(x) for x in d])
    w_plus = sum(r for r, x in zip(ranks, d) if x > 0)
    w_minus = sum(r for r, x in zip(ranks, d) if x < 0)
    t = min(w_plus, w_minus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        if sum(r for r, s in zip(ranks, signs) if s) <= t:
            hits += 1
    return t, min(1.0, 2 * hits / 2 ** len(d))


@pytest.mark.parametrize("n", range(5, 13))
def test_exact_matches_enumeration(n):
    rng = np.random.default_rng(n)
    for trial in range(6):
        if trial % 2:
            # coarse values force tied magnitudes and zero differences
            a = rng.integers(0, 5, size=n).astype(float)
            b = rng.integers(0, 5, size=n).astype(float)
        else:
            a, b = rng.normal(size=n), rng.normal(size=n) + 0.3 * trial
        if np.all(a == b):
            continue
        t, p = brute_force(a.tolist(), b.tolist())
        res = wilcoxon_signed_rank(a, b)
        assert res.method == "exact"
        assert res.statistic == t
        assert abs(res.pvalue - p) <= 1e-12


@pytest.mark.parametrize("n", range(1, 5))
def test_exact_small_n(n):
    a = np.arange(1, n + 1, dtype=float)
    b = np.zeros(n)
    t, p = brute_force(a.tolist(), b.tolist())
    res = wilcoxon_signed_rank(a, b, min_pairs=1)
    assert res.statistic == t and abs(res.pvalue - p) <= 1e-12


def test_known_table_value():
    # n = 8, all differences positive: p = 2 / 256
    res = wilcoxon_signed_rank(np.arange(1, 9, dtype=float), np.zeros(8))
    assert res.statistic == 0 and res.pvalue == 2 / 256


def test_matches_scipy_without_ties():
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=15), rng.normal(size=15)
    ours = wilcoxon_signed_rank(a, b)
    ref = scipy.stats.wilcoxon(a, b, method="exact")
    assert ours.statistic == ref.statistic
    assert abs(ours.pvalue - ref.pvalue) < 1e-12


def test_normal_approximation_matches_scipy():
    rng = np.random.default_rng(12)
    a = rng.integers(0, 20, size=60).astype(float)
    b = rng.integers(0, 20, size=60).astype(float) + 1
    ours = wilcoxon_signed_rank(a, b)
    ref = scipy.stats.wilcoxon(a, b, method="approx", correction=False)
    assert ours.method == "normal"
    assert ours.statistic == ref.statistic
    assert abs(ours.pvalue - ref.pvalue) < 1e-10


@given(st.lists(st.tuples(st.integers(-4, 4), st.integers(-4, 4)), min_size=5, max_size=10))
@settings(max_examples=80, deadline=None)
def test_symmetry_and_range(pairs):
    a = np.array([p[0] for p in pairs], float)
    b = np.array([p[1] for p in pairs], float)
    if np.all(a == b):
        with pytest.raises(TooFewPairs):
            wilcoxon_signed_rank(a, b)
        return
    ab, ba = wilcoxon_signed_rank(a, b), wilcoxon_signed_rank(b, a)
    assert ab.statistic == ba.statistic and ab.pvalue == ba.pvalue
    assert 0 < ab.pvalue <= 1


def test_too_few_pairs():
    with pytest.raises(TooFewPairs):
        wilcoxon_signed_rank([1, 2, 3, 4], [0, 0, 0, 0])


def test_confusion_and_accuracy():
    preds = [0, 1, 1, 2, 2, 2]
    labels = [0, 1, 2, 2, 2, 0]
    cm = confusion_matrix(preds, labels, 3)
    assert cm.sum() == 6
    assert cm[2, 1] == 1 and cm[0, 2] == 1
    assert accuracy_from_confusion(cm) == 4 / 6
    with pytest.raises(LabelOutOfRange):
        confusion_matrix([3], [0], 3)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), max_size=50))
def test_confusion_oracle(pairs):
    preds = [p for p, _ in pairs]
    labels = [l for _, l in pairs]
    cm = confusion_matrix(preds, labels, 5)
    for i in range(5):
        for j in range(5):
            assert cm[i, j] == sum(1 for p, l in pairs if l == i and p == j)


def test_mean_sd_sample():
    m, s = mean_sd([0.9, 0.95, 1.0])
    assert abs(m - 0.95) < 1e-15 and abs(s - 0.05) < 1e-15
