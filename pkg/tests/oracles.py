"""Slow, independent reference implementations used only by the tests."""

import math


def brute_nearest(feature, codes):
    best_k, best_d = -1, math.inf
    for k, code in enumerate(codes):
        d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(feature, code)))
        if d < best_d:
            best_k, best_d = k, d
    return best_k, best_d


def brute_kl(p, q, eps=1e-8):
    p = [v + eps for v in p]
    q = [v + eps for v in q]
    sp, sq = sum(p), sum(q)
    return sum((a / sp) * math.log((a / sp) / (b / sq)) for a, b in zip(p, q))


# Three 1-D codes at 0, 1, 2 and fifty features spread over [0.03, 1.99].
# Exhaustive scan (below) puts the KL optimum on the plateau [2.41, 3.09].
FIXTURE_CODES = [0.0, 1.0, 2.0]
FIXTURE_FEATURES = [0.03 + 0.04 * i for i in range(50)]
FIXTURE_DELTA = [0.15, -0.05, -0.10]
FIXTURE_P_CLEAN = [0.15, 0.35, 0.5]


def brute_weighted_hist(features, codes, delta, alpha):
    counts = [0] * len(codes)
    for f in features:
        wd = [abs(f - z) * math.exp(alpha * d) for z, d in zip(codes, delta)]
        counts[wd.index(min(wd))] += 1
    return [c / len(features) for c in counts]


def exhaustive_alpha(features, codes, delta, p_clean, lo=-60.0, hi=60.0, step=0.01):
    """Scan alpha on a fixed grid; return the first grid point with minimal KL."""
    best_a, best_kl = None, math.inf
    n = int(round((hi - lo) / step))
    for i in range(n + 1):
        a = lo + i * step
        kl = brute_kl(p_clean, brute_weighted_hist(features, codes, delta, a))
        if kl < best_kl - 1e-15:
            best_a, best_kl = a, kl
    return best_a, best_kl
