"""Independent BD-rate reference: Lagrange interpolation sampled densely, trapezoid integration.

Through exactly four points the least-squares cubic is the interpolating
cubic, so for 4-point curves this agrees with the closed-form fit up to
integration error.
"""

import math


def lagrange(xs, ys, x):
    total = 0.0
    for i, (xi, yi) in enumerate(zip(xs, ys)):
        term = yi
        for j, xj in enumerate(xs):
            if j != i:
                term *= (x - xj) / (xi - xj)
        total += term
    return total


def mean_log_rate(rates, quals, lo, hi, samples):
    logs = [math.log(r) for r in rates]
    step = (hi - lo) / samples
    acc = 0.0
    prev = lagrange(quals, logs, lo)
    for k in range(1, samples + 1):
        cur = lagrange(quals, logs, lo + k * step)
        acc += 0.5 * (prev + cur) * step
        prev = cur
    return acc / (hi - lo)


def bd_rate_oracle(anchor, test, samples=20000):
    """``anchor`` and ``test`` are lists of (rate, quality) pairs."""
    ar, aq = zip(*sorted(anchor))
    tr, tq = zip(*sorted(test))
    lo, hi = max(min(aq), min(tq)), min(max(aq), max(tq))
    diff = mean_log_rate(tr, tq, lo, hi, samples) - mean_log_rate(ar, aq, lo, hi, samples)
    return 100.0 * (math.exp(diff) - 1.0)


def random_curve_pair(rng, min_overlap=1.0):
    """Two monotone 4-point curves on one quality model, overlapping by at least ``min_overlap``."""
    base = rng.uniform(28, 34)
    slope = rng.uniform(3, 8)

    def curve(shift):
        rates = sorted(rng.uniform(0.05, 2.0, 4))
        while min(b - a for a, b in zip(rates, rates[1:])) < 0.02:
            rates = sorted(rng.uniform(0.05, 2.0, 4))
        quals = [base + slope * math.log(r) + rng.uniform(-0.2, 0.2) for r in rates]
        for k in range(1, 4):
            quals[k] = max(quals[k], quals[k - 1] + 0.3)
        return [(r * shift, q) for r, q in zip(rates, quals)]

    while True:
        a, b = curve(1.0), curve(rng.uniform(0.7, 1.4))
        lo = max(a[0][1], b[0][1])
        hi = min(a[-1][1], b[-1][1])
        if hi - lo >= min_overlap:
            return a, b
