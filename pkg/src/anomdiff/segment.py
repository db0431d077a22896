"""Change-point detection, state smoothing and piecewise normalization."""

from __future__ import annotations

import enum
import heapq
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    DiffusionParams,
    DiffusionState,
    ParamTrack,
    Segment,
    SegmentedTrajectory,
)

MIN_DWELL = 3


class CpAlgorithm(str, enum.Enum):
    PELT = "pelt"
    BINSEG = "binseg"
    BOTTOMUP = "bottomup"
    WINDOW = "window"


class CpCost(str, enum.Enum):
    L1 = "l1"
    L2 = "l2"
    LINEAR = "linear"


@dataclass(frozen=True)
class CpConfig:
    """Change-point settings.

    ``penalty=None`` means ``3 * sigma**2 * log(n)`` with ``sigma`` estimated
    from the median absolute deviation of first differences.
    """

    algorithm: CpAlgorithm = CpAlgorithm.WINDOW
    cost: CpCost = CpCost.L2
    penalty: float | None = None
    window_width: int = 20
    min_segment: int = 3

    def __post_init__(self):
        object.__setattr__(self, "algorithm", CpAlgorithm(getattr(self.algorithm, "value", self.algorithm).lower()))
        object.__setattr__(self, "cost", CpCost(getattr(self.cost, "value", self.cost).lower()))
        if self.min_segment < 1:
            raise ValueError("min_segment must be >= 1")
        if self.window_width < 2 * self.min_segment:
            raise ValueError("window_width must be >= 2 * min_segment")
        if self.penalty is not None and self.penalty < 0:
            raise ValueError("penalty must be >= 0")


# --- costs ----------------------------------------------------------------------


def segment_cost(series, a: int, b: int, cost: CpCost | str = CpCost.L2) -> float:
    """Cost of fitting ``series[a:b]`` with one constant (L1/L2) or one line."""
    x = np.asarray(series, dtype=float)[a:b]
    if x.ndim == 1:
        x = x[:, None]
    cost = CpCost(cost)
    if len(x) == 0:
        return 0.0
    if cost is CpCost.L2:
        return float(((x - x.mean(axis=0)) ** 2).sum())
    if cost is CpCost.L1:
        return float(np.abs(x - np.median(x, axis=0)).sum())
    if len(x) <= 2:
        return 0.0
    t = np.arange(len(x), dtype=float)
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, x, rcond=None)
    return float(((x - A @ coef) ** 2).sum())


class _Cost:
    """Segment cost with O(1) evaluation for L2."""

    def __init__(self, series: np.ndarray, cost: CpCost):
        x = np.asarray(series, dtype=float)
        self.x = x[:, None] if x.ndim == 1 else x
        self.kind = cost
        if cost is CpCost.L2:
            self.s1 = np.vstack([np.zeros(self.x.shape[1]), np.cumsum(self.x, axis=0)])
            self.s2 = np.vstack([np.zeros(self.x.shape[1]), np.cumsum(self.x**2, axis=0)])

    def __call__(self, a: int, b: int) -> float:
        if self.kind is CpCost.L2:
            s1 = self.s1[b] - self.s1[a]
            s2 = self.s2[b] - self.s2[a]
            return float(max((s2 - s1 * s1 / (b - a)).sum(), 0.0))
        return segment_cost(self.x, a, b, self.kind)


def objective(series, cps: Sequence[int], penalty: float, cost=CpCost.L2) -> float:
    """Total segment cost plus ``penalty`` per change point."""
    n = len(series)
    bounds = [0, *cps, n]
    return math.fsum(segment_cost(series, a, b, cost) for a, b in zip(bounds, bounds[1:])) + (
        penalty * len(cps)
    )


def default_penalty(series) -> float:
    """``3 * sigma^2 * log n`` with ``sigma`` from the MAD of first differences.

    On noiseless piecewise-constant input the MAD is 0; ``sigma^2`` is then
    floored at 1% of the series variance so that merging equal neighbours is
    still preferred over keeping them apart.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 3:
        return 0.0
    d = np.diff(x, axis=0)
    mad = np.median(np.abs(d - np.median(d, axis=0)), axis=0)
    sigma2 = max(((1.4826 * mad) ** 2 / 2.0).sum(), 0.01 * x.var(axis=0).sum())
    return float(3.0 * sigma2 * math.log(n))


# --- search methods ---------------------------------------------------------------


def pelt(series, penalty: float, cost=CpCost.L2, min_segment: int = 1) -> list[int]:
    """Exact penalized segmentation with pruning.

    A candidate ``s`` dominated at time ``t`` (``F[s] + C(s, t) > F[t]``) can
    only be discarded once ``t`` itself is usable as the last change point,
    i.e. from ``t + min_segment`` on; removals are deferred accordingly.
    """
    n = len(series)
    C = _Cost(series, CpCost(cost))
    F = np.full(n + 1, np.inf)
    F[0] = -penalty
    last = np.zeros(n + 1, dtype=int)
    candidates: list[int] = [0]
    doomed: dict[int, set[int]] = {}
    for t in range(min_segment, n + 1):
        s_new = t - min_segment
        if s_new > 0 and np.isfinite(F[s_new]):
            candidates.append(s_new)
        drop = doomed.pop(t, None)
        if drop:
            candidates = [s for s in candidates if s not in drop]
        vals = [(F[s] + C(s, t) + penalty, s) for s in candidates]
        F[t], last[t] = min(vals)
        dominated = {s for s in candidates if F[s] + C(s, t) > F[t]}
        if dominated:
            doomed.setdefault(t + min_segment, set()).update(dominated)
    cps = []
    t = n
    while t > 0:
        t = int(last[t])
        if t > 0:
            cps.append(t)
    return sorted(cps)


def binseg(series, penalty: float, cost=CpCost.L2, min_segment: int = 1) -> list[int]:
    """Greedy binary segmentation; splits while the best gain exceeds ``penalty``."""
    n = len(series)
    C = _Cost(series, CpCost(cost))

    def best_split(a, b):
        best = None
        base = C(a, b)
        for t in range(a + min_segment, b - min_segment + 1):
            gain = base - C(a, t) - C(t, b)
            if best is None or gain > best[0]:
                best = (gain, t)
        return best

    cps: list[int] = []
    heap = []
    bs = best_split(0, n)
    if bs:
        heapq.heappush(heap, (-bs[0], bs[1], 0, n))
    while heap:
        neg_gain, t, a, b = heapq.heappop(heap)
        if -neg_gain <= penalty:
            break
        cps.append(t)
        for lo, hi in ((a, t), (t, b)):
            bs = best_split(lo, hi)
            if bs:
                heapq.heappush(heap, (-bs[0], bs[1], lo, hi))
    return sorted(cps)


def bottomup(series, penalty: float, cost=CpCost.L2, min_segment: int = 1) -> list[int]:
    """Greedy merging of a fine grid while the cheapest merge costs at most ``penalty``.

    The grid cannot resolve a jump between two of its points, so once no
    merge is cheap enough every boundary is moved to its best position
    between its neighbours, and any two adjacent boundaries are replaced by
    one when that lowers the penalized cost.  Merging then resumes, until
    nothing changes.  Each refinement strictly lowers the objective.
    """
    n = len(series)
    C = _Cost(series, CpCost(cost))
    step = max(min_segment, 2)
    bounds = list(range(0, n, step))
    if len(bounds) > 1 and n - bounds[-1] < min_segment:
        bounds.pop()
    bounds.append(n)
    while True:
        while len(bounds) > 2:
            best = None
            for i in range(1, len(bounds) - 1):
                a, t, b = bounds[i - 1], bounds[i], bounds[i + 1]
                increase = C(a, b) - C(a, t) - C(t, b)
                if best is None or increase < best[0]:
                    best = (increase, i)
            if best[0] > penalty:
                break
            bounds.pop(best[1])
        moved = False
        for i in range(1, len(bounds) - 1):
            a, b = bounds[i - 1], bounds[i + 1]
            cur = C(a, bounds[i]) + C(bounds[i], b)
            for t in range(a + min_segment, b - min_segment + 1):
                v = C(a, t) + C(t, b)
                if v < cur:
                    cur, bounds[i], moved = v, t, True
        i = 1
        while i < len(bounds) - 2:
            a, b = bounds[i - 1], bounds[i + 2]
            cur = C(a, bounds[i]) + C(bounds[i], bounds[i + 1]) + C(bounds[i + 1], b) + penalty
            best_t, best_v = None, cur
            for t in range(a + min_segment, b - min_segment + 1):
                v = C(a, t) + C(t, b)
                if v < best_v:
                    best_t, best_v = t, v
            if best_t is not None:
                bounds[i : i + 2] = [best_t]
                moved = True
            i += 1
        if not moved:
            return bounds[1:-1]


def window_scores(series, width: int, cost=CpCost.L2) -> np.ndarray:
    """Two-sided discrepancy ``C(t-w/2, t+w/2) - C(t-w/2, t) - C(t, t+w/2)``.

    Frames too close to either end to hold a full window score 0.
    """
    n = len(series)
    C = _Cost(series, CpCost(cost))
    h = width // 2
    score = np.zeros(n + 1)
    for t in range(h, n - h + 1):
        score[t] = C(t - h, t + h) - C(t - h, t) - C(t, t + h)
    return score


def window_detect(series, penalty: float, cost=CpCost.L2, width: int = 20, min_segment: int = 1):
    """Peaks of the sliding-window discrepancy above ``penalty``.

    Peaks are local maxima over ``width // 2`` frames each side; they are
    accepted in decreasing score order while at least ``min_segment`` frames
    from every accepted peak and from both ends.
    """
    n = len(series)
    score = window_scores(series, width, cost)
    order = max(width // 2, 1)
    peaks = []
    for t in range(1, n):
        lo, hi = max(t - order, 0), min(t + order, n)
        if score[t] > penalty and score[t] >= score[lo : hi + 1].max():
            peaks.append(t)
    peaks.sort(key=lambda t: (-score[t], t))
    chosen: list[int] = []
    for t in peaks:
        if t < min_segment or n - t < min_segment:
            continue
        if all(abs(t - c) >= max(min_segment, order) for c in chosen):
            chosen.append(t)
    return sorted(chosen)


def detect_changepoints(series, cfg: CpConfig = CpConfig()) -> list[int]:
    """Ascending change-point indices strictly inside ``(0, len(series))``."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    if n < 2 * cfg.min_segment or np.ptp(x) == 0:
        return []
    pen = default_penalty(x) if cfg.penalty is None else cfg.penalty
    if cfg.algorithm is CpAlgorithm.PELT:
        return pelt(x, pen, cfg.cost, cfg.min_segment)
    if cfg.algorithm is CpAlgorithm.BINSEG:
        return binseg(x, pen, cfg.cost, cfg.min_segment)
    if cfg.algorithm is CpAlgorithm.BOTTOMUP:
        return bottomup(x, pen, cfg.cost, cfg.min_segment)
    return window_detect(x, pen, cfg.cost, cfg.window_width, cfg.min_segment)


# --- state smoothing ------------------------------------------------------------


def _runs(seq) -> list[list]:
    runs: list[list] = []
    for v in seq:
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    return runs


def smooth_states(state_t, min_dwell: int = MIN_DWELL) -> np.ndarray:
    """Absorb runs shorter than ``min_dwell`` frames into a neighbouring run.

    The shortest offending run (leftmost on ties) goes first and joins the
    longer adjacent run, the earlier one on ties; repeat until every run is
    long enough or a single run is left.
    """
    seq = np.asarray(state_t)
    if len(seq) == 0:
        raise ValueError("empty state sequence")
    runs = _runs(seq.tolist())
    while len(runs) > 1:
        short = [i for i, r in enumerate(runs) if r[1] < min_dwell]
        if not short:
            break
        i = min(short, key=lambda j: (runs[j][1], j))
        left = runs[i - 1] if i > 0 else None
        right = runs[i + 1] if i + 1 < len(runs) else None
        target = left if right is None or (left is not None and left[1] >= right[1]) else right
        target[1] += runs[i][1]
        del runs[i]
        merged: list[list] = []
        for r in runs:
            if merged and merged[-1][0] == r[0]:
                merged[-1][1] += r[1]
            else:
                merged.append(r)
        runs = merged
    return np.repeat([r[0] for r in runs], [r[1] for r in runs]).astype(seq.dtype)


# --- normalization ----------------------------------------------------------------


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def _mode(states: np.ndarray) -> int:
    counts = np.bincount(states, minlength=4)
    return int(np.argmax(counts))


def merge_changepoints(cps: Sequence[int], min_gap: int) -> list[int]:
    """Sorted union keeping the first of any points closer than ``min_gap``."""
    out: list[int] = []
    for c in sorted(set(int(c) for c in cps)):
        if not out or c - out[-1] >= min_gap:
            out.append(c)
    return out


def normalize_trajectory(track: ParamTrack, cfg: CpConfig = CpConfig()) -> SegmentedTrajectory:
    """Collapse a per-frame track into piecewise-constant segments.

    States are smoothed first.  Change points are searched separately on
    z-scored ``alpha`` and ``k`` and merged; each segment then takes the
    median ``alpha``, median ``k`` and most frequent state of its frames.
    """
    n = len(track)
    states = smooth_states(track.state_t) if n else track.state_t
    cps = []
    for channel in (track.alpha_t, track.k_t):
        cps.extend(detect_changepoints(_standardize(np.asarray(channel)), cfg))
    cps = merge_changepoints(cps, cfg.min_segment)
    bounds = [0, *cps, n]
    segs = []
    for a, b in zip(bounds, bounds[1:]):
        params = DiffusionParams(
            float(np.median(track.alpha_t[a:b])), float(np.median(track.k_t[a:b]))
        )
        segs.append(
            Segment(a + track.start_frame, b + track.start_frame, params, _mode(states[a:b]))
        )
    return SegmentedTrajectory(track.traj_id, tuple(segs))


# --- ensemble ---------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSummary:
    n_states: int
    alpha_mean: tuple[float, ...]
    alpha_std: tuple[float, ...]
    k_mean: tuple[float, ...]
    k_std: tuple[float, ...]
    weights: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "alpha_mean": list(self.alpha_mean),
            "alpha_std": list(self.alpha_std),
            "k_mean": list(self.k_mean),
            "k_std": list(self.k_std),
            "weights": list(self.weights),
        }


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list)


def _assign(X, centers):
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    # argmin returns the lowest index on ties
    return np.argmin(d2, axis=1), d2


def lloyd(X, centers, tol=1e-9, max_iter=300) -> KMeansResult:
    """Lloyd iterations; ``history`` records the objective after every step."""
    centers = centers.copy()
    labels, d2 = _assign(X, centers)
    history = [float(d2[np.arange(len(X)), labels].sum())]
    for _ in range(max_iter):
        for j in range(len(centers)):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        labels, d2 = _assign(X, centers)
        history.append(float(d2[np.arange(len(X)), labels].sum()))
        prev, cur = history[-2], history[-1]
        if prev - cur <= tol * max(abs(prev), 1e-300):
            break
    return KMeansResult(labels, centers, history[-1], history)


def kmeans(X, k: int, n_init: int = 50, seed: int = 0, tol: float = 1e-9) -> KMeansResult:
    """k-means++ seeding with a fixed seed, best of ``n_init`` restarts.

    Points are put in lexicographic order before seeding, so the result does
    not depend on the input order.
    """
    X = np.asarray(X, dtype=float)
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.Generator(np.random.Philox(seed))
    best = None
    for _ in range(n_init):
        centers = [Xs[rng.integers(len(Xs))]]
        for _ in range(1, k):
            d2 = np.min(((Xs[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
            total = d2.sum()
            if total == 0:
                centers.append(Xs[rng.integers(len(Xs))])
            else:
                centers.append(Xs[rng.choice(len(Xs), p=d2 / total)])
        res = lloyd(Xs, np.array(centers), tol)
        if best is None or res.inertia < best.inertia:
            best = res
    labels = np.empty(len(X), dtype=int)
    labels[order] = best.labels
    return KMeansResult(labels, best.centers, best.inertia, best.history)


def _summary(alpha, k, labels, n_states) -> EnsembleSummary:
    groups = [np.flatnonzero(labels == j) for j in range(n_states)]
    # clusters reported in order of increasing mean alpha, then k
    groups.sort(key=lambda g: (alpha[g].mean(), k[g].mean()))
    n = len(alpha)
    return EnsembleSummary(
        n_states,
        tuple(float(alpha[g].mean()) for g in groups),
        tuple(float(alpha[g].std()) for g in groups),
        tuple(float(k[g].mean()) for g in groups),
        tuple(float(k[g].std()) for g in groups),
        tuple(len(g) / n for g in groups),
    )


def aggregate_ensemble(
    trajectories: Sequence[SegmentedTrajectory],
    force_two_states: bool = False,
    n_states: int | None = None,
) -> EnsembleSummary:
    """Pool segment ``(alpha, k)`` values and summarize one or two states.

    Two states are fitted when any trajectory has a change point, when
    ``force_two_states`` is set, or when ``n_states=2`` is passed explicitly;
    clustering runs on z-scored ``(alpha, k)``.
    """
    segs = [s for st in trajectories for s in st.segments]
    if not segs:
        raise ValueError("no segments to aggregate")
    alpha = np.array([s.params.alpha for s in segs])
    k = np.array([s.params.k for s in segs])
    if n_states is None:
        multi = force_two_states or any(len(st.segments) > 1 for st in trajectories)
        n_states = 2 if multi else 1
    if n_states not in (1, 2):
        raise ValueError("only one or two ensemble states are supported")
    X = np.column_stack([alpha, k])
    if n_states == 2 and len(np.unique(X, axis=0)) < 2:
        warnings.warn("fewer than two distinct segment values; reporting one state")
        n_states = 1
    if n_states == 1:
        return _summary(alpha, k, np.zeros(len(segs), int), 1)
    sd = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    res = kmeans(Z, 2)
    return _summary(alpha, k, res.labels, 2)
