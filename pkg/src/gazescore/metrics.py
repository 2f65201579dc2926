"""Ordinal agreement metrics and the paired t-test.

Quadratic weighted kappa follows the standard Cohen construction: observed
and expected contingency matrices over the full declared score range with
quadratic penalty weights. Close/Correct counts mirror human-rater
agreement reporting. The t-test computes its own two-tailed p value from
the regularized incomplete beta function, evaluated by continued fraction,
so no statistics library is required at runtime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    n_pairs: int


def _contingency(pairs, min_rating, max_rating):
    n_classes = max_rating - min_rating + 1
    observed = np.zeros((n_classes, n_classes), dtype=np.float64)
    for predicted, actual in pairs:
        p, a = int(predicted), int(actual)
        if not (min_rating <= p <= max_rating and min_rating <= a <= max_rating):
            raise ValueError(
                f"rating pair ({p}, {a}) outside declared range [{min_rating}, {max_rating}]")
        observed[p - min_rating, a - min_rating] += 1.0
    return observed


def qwk(pairs, min_rating, max_rating):
    """Quadratic weighted kappa over the full declared score range.

    kappa = 1 - sum(W * O) / sum(W * E), where O is the observed
    contingency histogram, E the outer product of its marginals scaled to
    the same total, and W[i, j] = (i - j)^2 / (n_classes - 1)^2. When both
    sequences are the same constant the expected disagreement is zero and
    kappa is defined as 1.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("qwk: need at least one rating pair")
    if max_rating <= min_rating:
        raise ValueError(f"qwk: invalid range [{min_rating}, {max_rating}]")
    observed = _contingency(pairs, min_rating, max_rating)
    total = observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / total
    n_classes = observed.shape[0]
    idx = np.arange(n_classes, dtype=np.float64)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (n_classes - 1) ** 2
    denominator = float((weights * expected).sum())
    if denominator == 0.0:
        return 1.0
    return 1.0 - float((weights * observed).sum()) / denominator


def agreement_counts(pairs):
    """(correct, close): exact matches and matches within one point."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("agreement_counts: need at least one rating pair")
    correct = sum(1 for p, a in pairs if int(p) == int(a))
    close = sum(1 for p, a in pairs if abs(int(p) - int(a)) <= 1)
    return correct, close


# ---------------------------------------------------------------------------
# Student t distribution via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a, b, x):
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    max_iter = 300
    tiny = 1e-300
    eps = 1e-15
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction failed to converge")


def regularized_incomplete_beta(a, b, x):
    """I_x(a, b), accurate to better than 1e-10 absolute."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"incomplete beta: x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # use the representation that converges fast for the given x
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t, df):
    """P(T > t) for Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x)
    return tail if t > 0 else 1.0 - tail


def paired_t_test(series_a, series_b):
    """Two-tailed paired t-test on the elementwise differences a - b."""
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(
            f"paired_t_test: series must be equal-length 1-d, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"paired_t_test: need at least 2 pairs, got {n}")
    diff = a - b
    sd = float(diff.std(ddof=1))
    if sd == 0.0:
        raise ValueError(
            "paired_t_test: differences have zero variance; the test is undefined "
            "(series are identical up to a constant shift)")
    t = float(diff.mean()) / (sd / math.sqrt(n))
    p = 2.0 * t_sf(abs(t), n - 1)
    return SignificanceResult(t_statistic=t, p_value=min(p, 1.0), n_pairs=n)
