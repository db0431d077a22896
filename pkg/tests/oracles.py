"""Independent reference implementations used to check the package.

Each oracle is deliberately naive (brute force, direct formulas, dense
grids) and shares no code with the package under test.
"""

import itertools
import math
from functools import lru_cache

import numpy as np


def brute_force_assignment(cost) -> float:
    """Minimum total over all maximum-cardinality matchings of a finite matrix."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n <= m:
        return min(
            math.fsum(cost[i, p[i]] for i in range(n))
            for p in itertools.permutations(range(m), n)
        )
    return brute_force_assignment(cost.T)


def brute_force_forbidden(cost) -> tuple[int, float]:
    """(max number of allowed pairs, min total among those) with inf = forbidden."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n > m:
        return brute_force_forbidden(cost.T)
    best = (-1, math.inf)
    for p in itertools.permutations(range(m), n):
        pairs = [cost[i, p[i]] for i in range(n) if math.isfinite(cost[i, p[i]])]
        key = (len(pairs), math.fsum(pairs))
        if key[0] > best[0] or (key[0] == best[0] and key[1] < best[1]):
            best = key
    return best


def seg_cost_l2(x, a, b):
    seg = [float(v) for v in x[a:b]]
    mu = math.fsum(seg) / len(seg)
    return math.fsum((v - mu) ** 2 for v in seg)


def seg_cost_l1(x, a, b):
    seg = sorted(float(v) for v in x[a:b])
    k = len(seg)
    med = seg[k // 2] if k % 2 else (seg[k // 2 - 1] + seg[k // 2]) / 2
    return math.fsum(abs(v - med) for v in seg)


def seg_cost_linear(x, a, b):
    y = np.asarray(x[a:b], dtype=float)
    if len(y) <= 2:
        return 0.0
    t = np.arange(len(y), dtype=float)
    A = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(((y - A @ coef) ** 2).sum())


def exhaustive_segmentation(x, penalty, cost_fn, min_segment=1):
    """Optimal (value, change points) over every segmentation of ``x``.

    Segment costs are tabulated once and each candidate's value is the
    ``fsum`` of its terms.  Branches whose partial value already exceeds the
    best complete one are cut; since every term is nonnegative and ``fsum``
    is correctly rounded, the partial value never exceeds the final one, so
    the cut cannot discard an optimum.
    """
    n = len(x)
    table = {}
    for a in range(n):
        for b in range(a + min_segment, n + 1):
            table[a, b] = cost_fn(x, a, b)

    best = [math.inf, None]

    def rec(start, cps, terms):
        if math.fsum(terms) > best[0]:
            return
        if n - start >= min_segment:
            val = math.fsum(terms + [table[start, n]])
            if val < best[0] or (val == best[0] and best[1] is None):
                best[0], best[1] = val, list(cps)
        for t in range(start + min_segment, n - min_segment + 1):
            cps.append(t)
            rec(t, cps, terms + [table[start, t], penalty])
            cps.pop()

    rec(0, [], [])
    return best[0], best[1]


def segmentation_value(x, cps, penalty, cost_fn):
    """Objective of a given segmentation, computed the same way as above."""
    bounds = [0, *cps, len(x)]
    terms = [cost_fn(x, a, b) for a, b in zip(bounds, bounds[1:])] + [penalty] * len(cps)
    return math.fsum(terms)


def w1_grid(p, q, lo, hi, step=1e-4):
    """Midpoint-rule integral of |CDF_P - CDF_Q| over [lo, hi]."""
    p, q = np.sort(p), np.sort(q)
    xs = np.arange(lo, hi, step) + step / 2
    fp = np.searchsorted(p, xs, side="right") / len(p)
    fq = np.searchsorted(q, xs, side="right") / len(q)
    return float(np.abs(fp - fq).sum() * step)


def changepoint_pairing_oracle(gt, pred, eps=10.0):
    """Best total gated distance over all ways of pairing (some) points.

    Unpaired points cost ``eps`` each on the padded square matrix, so we
    enumerate permutations of the padded problem directly.
    """
    n, m = len(gt), len(pred)
    size = max(n, m)
    best = math.inf
    for perm in itertools.permutations(range(size)):
        tot = 0.0
        for i in range(size):
            j = perm[i]
            if i < n and j < m:
                tot += min(abs(gt[i] - pred[j]), eps)
            else:
                tot += eps
        best = min(best, tot)
    return best


def ensemble_msd_fit(paths, lags):
    """log-log regression of the per-axis ensemble MSD from the origin."""
    msd = np.array([(paths[:, t] - paths[:, 0]) ** 2 for t in lags]).mean(axis=(1, 2))
    slope, icpt = np.polyfit(np.log(lags), np.log(msd), 1)
    return slope, math.exp(icpt)
