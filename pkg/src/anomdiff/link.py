"""Frame-to-frame linking and VIP label matching.

Linking solves one optimal assignment per consecutive frame pair with
squared displacement as cost, which is the classic Crocker-Grier scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage as ndi

from .core import Trajectory
from .detect import Detection


class InfeasibleAssignment(ValueError):
    pass


def _hungarian(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path with potentials for ``n <= m``; returns row -> col."""
    n, m = cost.shape
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    rows = np.full(n, -1)
    for j in range(1, m + 1):
        if p[j]:
            rows[p[j] - 1] = j - 1
    return rows


def solve_assignment(cost, require_full: bool = False) -> np.ndarray:
    """Minimum-cost matching of a rectangular cost matrix.

    ``inf`` entries are forbidden pairs.  Among all matchings that use the
    largest possible number of allowed pairs, the one with the smallest total
    cost is returned as an array mapping each row to its column, or ``-1``
    for unassigned rows.

    With ``require_full`` every row (or column, whichever side is smaller)
    must be matched, otherwise :class:`InfeasibleAssignment` is raised.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.full(n, -1)
    if np.isnan(cost).any() or np.isneginf(cost).any():
        raise ValueError("cost contains NaN or -inf")
    allowed = np.isfinite(cost)
    if require_full:
        small_axis = 1 if n <= m else 0
        empty = ~allowed.any(axis=small_axis)
        if empty.any():
            side = "row" if small_axis == 1 else "column"
            raise InfeasibleAssignment(f"{side} {int(np.flatnonzero(empty)[0])} is all forbidden")

    transposed = n > m
    work = cost.T if transposed else cost
    ok = allowed.T if transposed else allowed
    if not ok.all():
        finite = work[ok]
        spread = (finite.max() - finite.min()) if finite.size else 0.0
        # worse than any combination of allowed pairs, so forbidden ones are used last
        big = (spread + 1.0) * (min(n, m) + 1) + (abs(finite).max() if finite.size else 0.0)
        work = np.where(ok, work, big)
    # shifting makes costs nonnegative without changing the optimum
    work = work - work.min()
    rows = _hungarian(work)
    if transposed:
        out = np.full(n, -1)
        for c, r in enumerate(rows):
            if r >= 0:
                out[r] = c
        rows = out
    for r, c in enumerate(rows):
        if c >= 0 and not allowed[r, c]:
            rows[r] = -1
    if require_full and (rows >= 0).sum() < min(n, m):
        raise InfeasibleAssignment("no full matching avoids the forbidden pairs")
    return rows


def assignment_total(cost, rows: np.ndarray) -> float:
    cost = np.asarray(cost, dtype=float)
    return math.fsum(cost[r, c] for r, c in enumerate(rows) if c >= 0)


@dataclass(frozen=True)
class LinkConfig:
    search_range: float = 5.0
    memory: int = 0

    def __post_init__(self):
        if self.search_range <= 0:
            raise ValueError("search_range must be > 0")
        if self.memory < 0:
            raise ValueError("memory must be >= 0")


@dataclass
class _Track:
    id: int
    frames: list = field(default_factory=list)
    points: list = field(default_factory=list)


def _group_by_frame(detections) -> dict[int, np.ndarray]:
    frames: dict[int, list] = {}
    for d in detections:
        if isinstance(d, Detection):
            frames.setdefault(int(d.frame), []).append((d.x, d.y))
        else:
            f, x, y = d[0], d[1], d[2]
            frames.setdefault(int(f), []).append((float(x), float(y)))
    return {f: np.asarray(v, dtype=float).reshape(-1, 2) for f, v in sorted(frames.items())}


def link(detections: Iterable, cfg: LinkConfig = LinkConfig(), fov_id: int = 0) -> list[Trajectory]:
    """Connect detections into trajectories.

    ``detections`` is an iterable of :class:`Detection` or ``(frame, x, y)``
    rows, or a list of per-frame lists of those.  Between consecutive frames
    the matching minimizes total squared displacement; pairs farther apart
    than ``search_range`` are never linked.  A particle missing for at most
    ``memory`` frames may be picked up again, the gap being filled by linear
    interpolation.  Ids follow order of first appearance.
    """
    detections = list(detections)
    if detections and all(
        isinstance(fr, list) and all(isinstance(d, Detection) for d in fr) for fr in detections
    ):
        detections = [d for fr in detections for d in fr]
    by_frame = _group_by_frame(detections)
    r2 = cfg.search_range**2

    active: list[_Track] = []
    finished: list[_Track] = []
    next_id = 0
    for f, pts in by_frame.items():
        still = []
        for tr in active:
            (finished if f - tr.frames[-1] > cfg.memory + 1 else still).append(tr)
        active = still
        matched_det = np.zeros(len(pts), bool)
        if active and len(pts):
            last = np.array([tr.points[-1] for tr in active])
            d2 = ((last[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
            cost = np.where(d2 <= r2, d2, np.inf)
            rows = solve_assignment(cost)
            for ti, di in enumerate(rows):
                if di < 0:
                    continue
                tr = active[ti]
                gap = f - tr.frames[-1]
                if gap > 1:
                    p0, p1 = np.asarray(tr.points[-1]), pts[di]
                    for g in range(1, gap):
                        tr.frames.append(tr.frames[-1] + 1)
                        tr.points.append(tuple(p0 + (p1 - p0) * g / gap))
                tr.frames.append(f)
                tr.points.append(tuple(pts[di]))
                matched_det[di] = True
        for di in np.flatnonzero(~matched_det):
            active.append(_Track(next_id, [f], [tuple(pts[di])]))
            next_id += 1
    finished.extend(active)
    finished.sort(key=lambda t: t.id)
    return [Trajectory(t.id, t.frames[0], t.points, fov_id) for t in finished]


@dataclass(frozen=True)
class VipMatch:
    mapping: dict
    unmatched: tuple = ()


def label_centroids(vip: np.ndarray) -> dict[int, tuple[float, float]]:
    """``label -> (x, y)`` centroid of each labelled region."""
    vip = np.asarray(vip)
    labels = [int(v) for v in np.unique(vip) if v > 0]
    if not labels:
        return {}
    cms = ndi.center_of_mass(np.ones_like(vip, dtype=float), vip, labels)
    return {lab: (float(c[1]), float(c[0])) for lab, c in zip(labels, cms)}


def match_vips(
    vip: np.ndarray,
    trajectories: Sequence[Trajectory],
    frame: int = 0,
    max_distance: float = math.inf,
) -> VipMatch:
    """Pair VIP labels with the trajectories present at ``frame``.

    Label centroids and trajectory positions are matched by a linear sum
    assignment on Euclidean distance, so the total distance is minimal
    rather than each label greedily taking its nearest particle.
    """
    cents = label_centroids(vip)
    labels = sorted(cents)
    present = [t for t in trajectories if t.start_frame <= frame < t.end_frame]
    if not labels:
        return VipMatch({}, ())
    if not present:
        return VipMatch({}, tuple(labels))
    L = np.array([cents[lab] for lab in labels])
    P = np.array([t.points[frame - t.start_frame] for t in present])
    dist = np.hypot(L[:, None, 0] - P[None, :, 0], L[:, None, 1] - P[None, :, 1])
    cost = np.where(dist <= max_distance, dist, np.inf)
    rows = solve_assignment(cost)
    mapping = {lab: present[c].id for lab, c in zip(labels, rows) if c >= 0}
    unmatched = tuple(lab for lab, c in zip(labels, rows) if c < 0)
    return VipMatch(mapping, unmatched)
