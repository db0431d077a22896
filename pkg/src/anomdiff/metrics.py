"""Evaluation metrics for change points, parameters, states and ensembles."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ExperimentGroundTruth, ParamTrack, SegmentedTrajectory, segments_from_track
from .link import solve_assignment

EPS_CP = 10.0


@dataclass(frozen=True)
class CpMatchResult:
    pairs: tuple[tuple[int, int], ...]
    distances: tuple[float, ...]
    tp: int
    fp: int
    fn: int
    eps_cp: float = EPS_CP


def gated_distance(t_gt, t_p, eps: float = EPS_CP):
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return np.minimum(np.abs(np.asarray(t_gt, float) - np.asarray(t_p, float)), eps)


def pair_changepoints(gt: Sequence[float], pred: Sequence[float], eps: float = EPS_CP) -> CpMatchResult:
    """Optimal pairing of true and predicted change points.

    The square cost matrix holds gated distances, padded with ``eps`` for
    "left unmatched".  A matched pair is a true positive only if its gated
    distance is strictly below ``eps``.
    """
    gt = np.asarray(gt, dtype=float)
    pred = np.asarray(pred, dtype=float)
    n, m = len(gt), len(pred)
    if n == 0 or m == 0:
        return CpMatchResult((), (), 0, m, n, eps)
    size = max(n, m)
    cost = np.full((size, size), float(eps))
    cost[:n, :m] = gated_distance(gt[:, None], pred[None, :], eps)
    rows = solve_assignment(cost)
    pairs, dists = [], []
    for i in range(n):
        j = int(rows[i])
        if 0 <= j < m:
            pairs.append((i, j))
            dists.append(float(cost[i, j]))
    tp = sum(d < eps for d in dists)
    return CpMatchResult(tuple(pairs), tuple(dists), tp, m - tp, n - tp, eps)


def jsc(m: CpMatchResult) -> float:
    """``TP / (TP + FP + FN)``; 1 when both sides have no change points."""
    denom = m.tp + m.fp + m.fn
    return 1.0 if denom == 0 else m.tp / denom


def _tp_differences(m: CpMatchResult, gt, pred) -> list[float]:
    return [
        float(gt[i]) - float(pred[j]) for (i, j), d in zip(m.pairs, m.distances) if d < m.eps_cp
    ]


def rmse_cp(m: CpMatchResult, gt, pred) -> float:
    """RMSE of raw differences over true-positive pairs; 0 with no pairs."""
    diffs = _tp_differences(m, gt, pred)
    if not diffs:
        return 0.0
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))


def _check_lengths(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae_alpha(gt, pred) -> float:
    gt, pred = _check_lengths(gt, pred)
    return float(np.mean(np.abs(gt - pred))) if gt.size else 0.0


def msle_k(gt, pred) -> float:
    gt, pred = _check_lengths(gt, pred)
    if (gt < 0).any() or (pred < 0).any():
        warnings.warn("negative K values clamped to 0")
        gt, pred = np.maximum(gt, 0), np.maximum(pred, 0)
    return float(np.mean((np.log1p(gt) - np.log1p(pred)) ** 2)) if gt.size else 0.0


def f1_state(gt, pred) -> float:
    """Micro-averaged F1 over frames, counts summed over the four classes."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"length mismatch: {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        return 1.0
    tp = fp = fn = 0
    for c in range(4):
        tp += int(((pred == c) & (gt == c)).sum())
        fp += int(((pred == c) & (gt != c)).sum())
        fn += int(((pred != c) & (gt == c)).sum())
    return 2 * tp / (2 * tp + fp + fn)


def wasserstein1(p, q, restrict: bool = True) -> float:
    """First Wasserstein distance between two empirical samples.

    Integrates ``|CDF_P - CDF_Q|`` exactly over the piecewise-constant
    breakpoints.  With ``restrict`` the integral only covers
    ``[min(q), max(q)]``, which makes it asymmetric and zero whenever ``q``
    is a point mass.
    """
    p = np.sort(np.asarray(p, dtype=float))
    q = np.sort(np.asarray(q, dtype=float))
    if p.size == 0 or q.size == 0:
        raise ValueError("both samples must be non-empty")
    xs = np.union1d(p, q)
    if restrict:
        xs = np.unique(np.clip(xs, q[0], q[-1]))
    if len(xs) < 2:
        return 0.0
    left = xs[:-1]
    cdf_p = np.searchsorted(p, left, side="right") / p.size
    cdf_q = np.searchsorted(q, left, side="right") / q.size
    return float(np.sum(np.abs(cdf_p - cdf_q) * np.diff(xs)))


@dataclass(frozen=True)
class EvaluationReport:
    rmse_cp: float
    jsc: float
    mae_alpha: float
    msle_k: float
    f1_state: float
    w1_alpha: float
    w1_k: float
    n_trajs: int
    w1_alpha_unrestricted: float = 0.0
    w1_k_unrestricted: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    CSV_COLUMNS = (
        "n_trajs",
        "rmse_cp",
        "jsc",
        "mae_alpha",
        "msle_k",
        "f1_state",
        "w1_alpha",
        "w1_k",
    )


class EvaluationError(ValueError):
    pass


def _truth_tracks(truth) -> dict[int, tuple[ParamTrack, list[int]]]:
    if isinstance(truth, ExperimentGroundTruth):
        return {
            tk.traj_id: (tk, list(cp)) for tk, cp in zip(truth.truth_tracks, truth.changepoints)
        }
    out = {}
    for st in truth:
        st = st if isinstance(st, SegmentedTrajectory) else segments_from_track(st)
        out[st.traj_id] = (st.to_track(), st.changepoints)
    return out


def evaluate_experiment(predictions: Sequence, truth, eps: float = EPS_CP) -> EvaluationReport:
    """Score predicted segmentations against ground truth for one experiment.

    ``predictions`` are :class:`SegmentedTrajectory` (or ParamTracks, which
    are segmented exactly).  Trajectories are matched by id and compared on
    the frames both cover.  Change-point counts are pooled before JSC,
    MAE/MSLE/F1 are frame-weighted, and the W1 distances compare the pooled
    per-segment values.
    """
    preds = {}
    for p in predictions:
        st = p if isinstance(p, SegmentedTrajectory) else segments_from_track(p)
        preds[st.traj_id] = st
    gt = _truth_tracks(truth)

    problems = []
    problems += [f"trajectory {i}: no ground truth" for i in sorted(set(preds) - set(gt))]
    problems += [f"trajectory {i}: no prediction" for i in sorted(set(gt) - set(preds))]
    if problems:
        raise EvaluationError("; ".join(problems))

    tp = fp = fn = 0
    diffs: list[float] = []
    a_gt, a_p, k_gt, k_p, s_gt, s_p = [], [], [], [], [], []
    seg_gt_a, seg_gt_k, seg_p_a, seg_p_k = [], [], [], []
    for tid in sorted(gt):
        tk, cps = gt[tid]
        st = preds[tid]
        lo = max(tk.start_frame, st.start_frame)
        hi = min(tk.start_frame + len(tk), st.end_frame)
        if hi <= lo:
            problems.append(f"trajectory {tid}: prediction does not overlap the truth")
            continue
        ptk = st.to_track()
        gsl = slice(lo - tk.start_frame, hi - tk.start_frame)
        psl = slice(lo - ptk.start_frame, hi - ptk.start_frame)
        a_gt.append(tk.alpha_t[gsl])
        a_p.append(ptk.alpha_t[psl])
        k_gt.append(tk.k_t[gsl])
        k_p.append(ptk.k_t[psl])
        s_gt.append(tk.state_t[gsl])
        s_p.append(ptk.state_t[psl])

        g = [c for c in cps if lo < c < hi]
        p = [c for c in st.changepoints if lo < c < hi]
        m = pair_changepoints(g, p, eps)
        tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
        diffs += _tp_differences(m, g, p)

        gseg = segments_from_track(ParamTrack(tid, tk.alpha_t[gsl], tk.k_t[gsl], tk.state_t[gsl], lo))
        seg_gt_a += [s.params.alpha for s in gseg.segments]
        seg_gt_k += [s.params.k for s in gseg.segments]
        for s in st.segments:
            if s.end > lo and s.start < hi:
                seg_p_a.append(s.params.alpha)
                seg_p_k.append(s.params.k)
    if problems:
        raise EvaluationError("; ".join(problems))
    if not gt:
        raise EvaluationError("no trajectories to evaluate")

    cat = np.concatenate
    denom = tp + fp + fn
    return EvaluationReport(
        rmse_cp=math.sqrt(math.fsum(d * d for d in diffs) / len(diffs)) if diffs else 0.0,
        jsc=1.0 if denom == 0 else tp / denom,
        mae_alpha=mae_alpha(cat(a_gt), cat(a_p)),
        msle_k=msle_k(cat(k_gt), cat(k_p)),
        f1_state=f1_state(cat(s_gt), cat(s_p)),
        w1_alpha=wasserstein1(seg_p_a, seg_gt_a),
        w1_k=wasserstein1(seg_p_k, seg_gt_k),
        n_trajs=len(gt),
        w1_alpha_unrestricted=wasserstein1(seg_p_a, seg_gt_a, restrict=False),
        w1_k_unrestricted=wasserstein1(seg_p_k, seg_gt_k, restrict=False),
    )


_ENSEMBLE_FIELDS = {"w1_alpha", "w1_k", "w1_alpha_unrestricted", "w1_k_unrestricted"}


def combine_reports(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    """Trajectory-weighted mean of single-trajectory metrics; plain mean of W1."""
    if not reports:
        raise ValueError("no reports to combine")
    w = np.array([r.n_trajs for r in reports], dtype=float)
    vals = {}
    for f in dataclasses.fields(EvaluationReport):
        if f.name == "n_trajs":
            continue
        x = np.array([getattr(r, f.name) for r in reports])
        if f.name in _ENSEMBLE_FIELDS or w.sum() == 0:
            vals[f.name] = float(x.mean())
        else:
            vals[f.name] = float((w * x).sum() / w.sum())
    return EvaluationReport(n_trajs=int(w.sum()), **vals)
