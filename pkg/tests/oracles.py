"""Brute-force reference implementations used only as test oracles."""
import math

import numpy as np


def c_statistic_pairwise(scores, labels) -> float:
    """All-pairs concordance count, O(n^2); ties get half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for s1 in pos:
        for s0 in neg:
            if s1 > s0:
                total += 1.0
            elif s1 == s0:
                total += 0.5
    return total / (pos.size * neg.size)


def log_odds_ratio_2x2(y_active, y_reference) -> float:
    """Log odds ratio of two binary outcome vectors from a 2x2 table."""
    a = float(np.sum(y_active == 1))
    b = float(np.sum(y_active == 0))
    c = float(np.sum(y_reference == 1))
    d = float(np.sum(y_reference == 0))
    return math.log((a / b) / (c / d))


def logistic_nll(x, y, beta) -> float:
    """Average negative log-likelihood of a logistic model."""
    eta = x @ beta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def numeric_gradient(f, x, h=1e-6) -> np.ndarray:
    """Central-difference gradient for objective cross-checks."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g
