"""Spot detection: band-pass, local maxima, mass threshold, centroid refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi


@dataclass(frozen=True)
class DetectConfig:
    diameter: int = 3
    minmass: float = 13.0
    separation: float = 2.6
    border_pad: int | None = None  # defaults to ``diameter``

    def __post_init__(self):
        if self.diameter < 3 or self.diameter % 2 == 0:
            raise ValueError("diameter must be an odd integer >= 3")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if self.minmass < 0:
            raise ValueError("minmass must be >= 0")

    @property
    def pad(self) -> int:
        return self.diameter if self.border_pad is None else int(self.border_pad)


@dataclass(frozen=True)
class Detection:
    frame: int
    x: float
    y: float
    mass: float


def _bandpass(img: np.ndarray, diameter: int) -> np.ndarray:
    blurred = ndi.gaussian_filter(img, diameter / 4.0, mode="reflect")
    background = ndi.uniform_filter(img, 2 * diameter + 1, mode="reflect")
    return np.clip(blurred - background, 0.0, None)


def preprocess(frame: np.ndarray, cfg: DetectConfig = DetectConfig()) -> np.ndarray:
    """Mirror-pad, normalize and band-pass one frame.

    The frame is scaled to zero mean and unit variance first; the band-pass
    removes the mean anyway, so the only effect is a global scale that
    :func:`locate` undoes when reporting masses.  Output is padded by
    ``cfg.pad`` on every side.
    """
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError("expected a 2-D frame")
    if min(frame.shape) < 2 * cfg.diameter:
        raise ValueError(f"frame {frame.shape} smaller than 2 * diameter")
    img = frame.astype(float)
    std = img.std()
    if std == 0:
        return np.zeros((img.shape[0] + 2 * cfg.pad, img.shape[1] + 2 * cfg.pad))
    img = (img - img.mean()) / std
    img = np.pad(img, cfg.pad, mode="symmetric")
    return _bandpass(img, cfg.diameter)


def _disc(radius: float) -> np.ndarray:
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx**2 + yy**2 <= radius**2


# band-passed values below this (in units of the frame std) are rounding residue
PEAK_FLOOR = 1e-6


def _refine(img, row, col, mask, yy, xx, max_iter=10):
    """Intensity-weighted centroid, re-centred while the offset exceeds 0.6 px."""
    r = mask.shape[0] // 2
    H, W = img.shape
    for _ in range(max_iter):
        patch = img[row - r : row + r + 1, col - r : col + r + 1] * mask
        mass = patch.sum()
        if mass <= 0:
            return float(col), float(row), 0.0
        dy, dx = (patch * yy).sum() / mass, (patch * xx).sum() / mass
        step_r = int(round(dy)) if abs(dy) > 0.6 else 0
        step_c = int(round(dx)) if abs(dx) > 0.6 else 0
        nr, nc = row + step_r, col + step_c
        if (step_r == 0 and step_c == 0) or not (r <= nr < H - r and r <= nc < W - r):
            break
        row, col = nr, nc
    return col + dx, row + dy, mass


def locate(frame: np.ndarray, cfg: DetectConfig = DetectConfig(), frame_no: int = 0):
    """Find particles in one frame.

    Returns :class:`Detection` objects in original (unpadded) pixel
    coordinates, ``x`` being the column.  No two detections are closer than
    ``cfg.separation``; when they would be, the brighter one wins and equal
    masses are broken by ``(y, x)`` order.
    """
    frame = np.asarray(frame)
    scale = frame.astype(float).std()
    img = preprocess(frame, cfg)
    if scale == 0 or not img.any():
        return []
    pad = cfg.pad
    radius = cfg.diameter / 2.0
    mask = _disc(radius)
    r = mask.shape[0] // 2

    footprint = _disc(max(cfg.separation / 2.0, 1.0))
    peaks = (img == ndi.maximum_filter(img, footprint=footprint, mode="constant")) & (
        img > PEAK_FLOOR
    )
    H, W = frame.shape
    rows, cols = np.nonzero(peaks)
    keep = (rows >= pad) & (rows < pad + H) & (cols >= pad) & (cols < pad + W)
    keep &= (rows >= r) & (rows < img.shape[0] - r) & (cols >= r) & (cols < img.shape[1] - r)

    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    cands = []
    for row, col in zip(rows[keep], cols[keep]):
        x, y, mass = _refine(img, int(row), int(col), mask, yy, xx)
        mass *= scale
        if mass >= cfg.minmass:
            cands.append((-mass, y - pad, x - pad))
    cands.sort()

    out: list[Detection] = []
    kept = np.empty((0, 2))
    for neg_mass, y, x in cands:
        if len(kept) and np.min(np.hypot(kept[:, 0] - x, kept[:, 1] - y)) < cfg.separation:
            continue
        kept = np.vstack([kept, (x, y)])
        out.append(Detection(frame_no, float(x), float(y), float(-neg_mass)))
    out.sort(key=lambda d: (d.y, d.x))
    return out


def locate_stack(frames: np.ndarray, cfg: DetectConfig = DetectConfig()) -> list[list[Detection]]:
    return [locate(f, cfg, i) for i, f in enumerate(frames)]


DETECTION_HEADER = ["frame", "x", "y", "mass"]


def write_detections(dets, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_HEADER)
        for d in dets:
            w.writerow([d.frame, repr(d.x), repr(d.y), repr(d.mass)])


def read_detections(path) -> list[Detection]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != DETECTION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(DETECTION_HEADER)}")
        out = []
        for row in reader:
            if not row:
                continue
            try:
                out.append(Detection(int(row[0]), float(row[1]), float(row[2]), float(row[3])))
            except (ValueError, IndexError):
                raise ValueError(f"{path}: line {reader.line_num}: cannot parse {row!r}") from None
    return out
