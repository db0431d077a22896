"""Frame-by-frame parameter tracks.

The built-in predictor is a sliding-window time-averaged MSD fit.  Any
external model (e.g. a neural network) plugs in by writing ParamTrack CSV
files that :func:`load_predictions` reads back and validates.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ALPHA_MAX,
    ALPHA_MIN,
    DiffusionState,
    ParamTrack,
    Trajectory,
    CsvFormatError,
    read_param_tracks,
)


@dataclass(frozen=True)
class EstimatorConfig:
    window: int = 31
    min_lags: int = 4
    k_immobile: float = 1e-3
    alpha_directed: float = 1.9
    confinement_radius: float = 2.0

    def __post_init__(self):
        if self.min_lags < 1:
            raise ValueError("min_lags must be >= 1")
        if self.window < 2 * self.min_lags + 1:
            raise ValueError("window must be >= 2 * min_lags + 1")

    @classmethod
    def from_mapping(cls, d: dict) -> "EstimatorConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown estimator options: {sorted(unknown)}")
        return cls(**d)


def to_displacements(traj: Trajectory | np.ndarray, scale: float = 1.0) -> np.ndarray:
    """``(x(t) - x(t-1), y(t) - y(t-1)) * scale``; one row shorter than the input."""
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    return np.diff(pts, axis=0) * scale


def _window_bounds(n: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    h = window // 2
    i = np.arange(n)
    return np.maximum(i - h, 0), np.minimum(i + h + 1, n)


def _windowed_msd(points: np.ndarray, lags: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-axis TA-MSD for lags ``1..lags`` inside each window ``[lo, hi)``.

    Returns shape ``(len(lo), lags)``; entries with no pairs are NaN.
    """
    out = np.full((len(lo), lags), np.nan)
    for lag in range(1, lags + 1):
        sd = ((points[lag:] - points[:-lag]) ** 2).sum(axis=1) / 2.0
        cs = np.concatenate([[0.0], np.cumsum(sd)])
        a, b = lo, hi - lag
        cnt = b - a
        ok = cnt > 0
        out[ok, lag - 1] = (cs[b[ok]] - cs[a[ok]]) / cnt[ok]
    return out


def _loglog_fit(msd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``log msd = log k + alpha log lag`` per row."""
    n, lags = msd.shape
    x = np.log(np.arange(1, lags + 1, dtype=float))
    alpha = np.ones(n)
    k = np.zeros(n)
    good = np.all(msd > 0, axis=1)
    if good.any():
        y = np.log(msd[good])
        xm = x.mean()
        ym = y.mean(axis=1)
        slope = ((x - xm) * (y - ym[:, None])).sum(axis=1) / ((x - xm) ** 2).sum()
        alpha[good] = slope
        k[good] = np.exp(ym - slope * xm)
    return alpha, k


def radius_of_gyration(points: np.ndarray, window: int) -> np.ndarray:
    """Centred-window ``sqrt(mean |r - r_mean|^2)`` per frame."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    lo, hi = _window_bounds(n, window)
    cs = np.concatenate([[[0.0, 0.0]], np.cumsum(points, axis=0)])
    cs2 = np.concatenate([[0.0], np.cumsum((points**2).sum(axis=1))])
    cnt = (hi - lo).astype(float)
    mean = (cs[hi] - cs[lo]) / cnt[:, None]
    var = (cs2[hi] - cs2[lo]) / cnt - (mean**2).sum(axis=1)
    return np.sqrt(np.clip(var, 0.0, None))


def classify_state(alpha_t, k_t, positions, cfg: EstimatorConfig = EstimatorConfig()) -> np.ndarray:
    """Per-frame state codes.

    Immobile below ``k_immobile``; otherwise Directed above
    ``alpha_directed``; otherwise Confined when the windowed radius of
    gyration is under ``confinement_radius``; otherwise Free.
    """
    alpha_t = np.asarray(alpha_t, dtype=float)
    k_t = np.asarray(k_t, dtype=float)
    rg = radius_of_gyration(positions, cfg.window)
    state = np.full(len(alpha_t), int(DiffusionState.FREE))
    state[rg < cfg.confinement_radius] = DiffusionState.CONFINED
    state[alpha_t > cfg.alpha_directed] = DiffusionState.DIRECTED
    state[k_t < cfg.k_immobile] = DiffusionState.IMMOBILE
    return state


def estimate_params_window(traj: Trajectory, cfg: EstimatorConfig = EstimatorConfig()) -> ParamTrack:
    """Sliding-window MSD estimate of ``(alpha, k, state)`` at every frame.

    ``k`` uses the per-axis convention ``MSD_x(lag) = k * lag**alpha``.  The
    first and last ``min_lags`` frames copy the nearest interior estimate.
    Trajectories too short for a fit get ``alpha = 1`` and ``k`` equal to
    half the mean squared step, flagged ``low_confidence``.
    """
    pts = traj.points
    n = len(pts)
    L = cfg.min_lags
    if n < L + 2:
        steps = np.diff(pts, axis=0)
        k = float((steps**2).sum(axis=1).mean() / 2.0) if len(steps) else 0.0
        alpha = np.ones(n)
        kk = np.full(n, k)
        return ParamTrack(
            traj.id, alpha, kk, classify_state(alpha, kk, pts, cfg), traj.start_frame, True
        )

    lo, hi = _window_bounds(n, cfg.window)
    msd = _windowed_msd(pts, L, lo, hi)
    alpha, k = _loglog_fit(msd)
    alpha = np.clip(alpha, ALPHA_MIN, ALPHA_MAX)

    # copy the nearest interior estimate into the edges
    first, last = L, n - 1 - L
    if first <= last:
        idx = np.clip(np.arange(n), first, last)
        alpha, k = alpha[idx], k[idx]
    state = classify_state(alpha, k, pts, cfg)
    return ParamTrack(traj.id, alpha, k, state, traj.start_frame)


def estimate_all(trajs: Sequence[Trajectory], cfg: EstimatorConfig = EstimatorConfig()):
    return [estimate_params_window(t, cfg) for t in trajs]


def load_predictions(path, trajectories: Sequence[Trajectory] | None = None) -> list[ParamTrack]:
    """Read externally produced ParamTracks.

    When ``trajectories`` is given every track must cover exactly the frames
    of the trajectory with the same id; mismatches are reported together.
    """
    tracks = read_param_tracks(path)
    if trajectories is None:
        return tracks
    errors = []
    by_id = {t.traj_id: t for t in tracks}
    for tr in trajectories:
        tk = by_id.get(tr.id)
        if tk is None:
            errors.append((0, f"no prediction for trajectory {tr.id}"))
        elif tk.start_frame != tr.start_frame or len(tk) != len(tr):
            errors.append(
                (
                    0,
                    f"trajectory {tr.id}: prediction covers frames "
                    f"[{tk.start_frame}, {tk.start_frame + len(tk)}) "
                    f"but trajectory has [{tr.start_frame}, {tr.end_frame})",
                )
            )
    extra = set(by_id) - {t.id for t in trajectories}
    errors.extend((0, f"prediction for unknown trajectory {i}") for i in sorted(extra))
    if errors:
        raise CsvFormatError(path, errors)
    return [by_id[t.id] for t in trajectories]
