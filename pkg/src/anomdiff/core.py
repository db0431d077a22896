"""Shared domain types, validation and file formats.

Coordinates are in pixels, time is in frames.  Every frame index stored on a
type (trajectory start, segment bounds, change points) is an *absolute* frame
of the recording, so that tracks cut from different fields of view, or
recovered from video, can be compared frame by frame.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N_FRAMES = 208
MAX_PARTICLES = 64
ALPHA_MIN = 1e-3
ALPHA_MAX = 2.0


class DiffusionState(enum.IntEnum):
    IMMOBILE = 0
    CONFINED = 1
    FREE = 2
    DIRECTED = 3


class ModelKind(str, enum.Enum):
    SSM = "ssm"
    MSM = "msm"
    DIM = "dim"
    TCM = "tcm"
    QTM = "qtm"


def clamp_alpha(alpha):
    return np.clip(alpha, ALPHA_MIN, ALPHA_MAX)


def clamp_k(k):
    return np.maximum(k, 0.0)


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DiffusionParams:
    """Anomalous exponent and generalized diffusion coefficient.

    ``alpha`` is clamped to ``[1e-3, 2]`` and ``k`` to ``[0, inf)`` so that
    downstream logarithms are always defined.
    """

    alpha: float
    k: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.k)):
            raise ValueError(f"non-finite diffusion parameters ({self.alpha}, {self.k})")
        object.__setattr__(self, "alpha", float(clamp_alpha(self.alpha)))
        object.__setattr__(self, "k", float(clamp_k(self.k)))


@dataclass(frozen=True)
class Trajectory:
    """Positions of one particle over consecutive frames.

    ``points`` has shape ``(n, 2)`` holding ``(x, y)``; ``x`` is the column
    coordinate and ``y`` the row coordinate of the image.
    """

    id: int
    start_frame: int
    points: np.ndarray
    fov_id: int = 0

    def __post_init__(self):
        pts = _frozen(self.points).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError(f"trajectory {self.id} has no points")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"trajectory {self.id} has non-finite coordinates")
        if self.start_frame < 0:
            raise ValueError(f"trajectory {self.id} starts at negative frame")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def frames(self) -> np.ndarray:
        return np.arange(self.start_frame, self.start_frame + len(self.points))

    @property
    def end_frame(self) -> int:
        """Exclusive end frame."""
        return self.start_frame + len(self.points)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.id == other.id
            and self.start_frame == other.start_frame
            and self.fov_id == other.fov_id
            and np.array_equal(self.points, other.points)
        )

    __hash__ = None


@dataclass(frozen=True)
class ParamTrack:
    """Per-frame ``(alpha, k, state)`` for one trajectory."""

    traj_id: int
    alpha_t: np.ndarray
    k_t: np.ndarray
    state_t: np.ndarray
    start_frame: int = 0
    low_confidence: bool = False

    def __post_init__(self):
        a = _frozen(clamp_alpha(np.asarray(self.alpha_t, dtype=float)))
        k = _frozen(clamp_k(np.asarray(self.k_t, dtype=float)))
        s = _frozen(self.state_t, dtype=np.int64)
        if not (len(a) == len(k) == len(s)):
            raise ValueError(
                f"track {self.traj_id}: alpha/k/state lengths differ ({len(a)}, {len(k)}, {len(s)})"
            )
        if len(s) and (s.min() < 0 or s.max() > 3):
            raise ValueError(f"track {self.traj_id}: state codes outside 0..3")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(k))):
            raise ValueError(f"track {self.traj_id}: non-finite parameters")
        object.__setattr__(self, "alpha_t", a)
        object.__setattr__(self, "k_t", k)
        object.__setattr__(self, "state_t", s)

    def __len__(self):
        return len(self.state_t)

    @property
    def frames(self) -> np.ndarray:
        return np.arange(self.start_frame, self.start_frame + len(self))

    def __eq__(self, other):
        if not isinstance(other, ParamTrack):
            return NotImplemented
        return (
            self.traj_id == other.traj_id
            and self.start_frame == other.start_frame
            and np.array_equal(self.alpha_t, other.alpha_t)
            and np.array_equal(self.k_t, other.k_t)
            and np.array_equal(self.state_t, other.state_t)
        )

    __hash__ = None


@dataclass(frozen=True)
class Segment:
    """Frames ``[start, end)`` with constant parameters and state."""

    start: int
    end: int
    params: DiffusionParams
    state: DiffusionState

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty segment [{self.start}, {self.end})")
        object.__setattr__(self, "state", DiffusionState(int(self.state)))

    def __len__(self):
        return self.end - self.start


@dataclass(frozen=True)
class SegmentedTrajectory:
    traj_id: int
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError(f"trajectory {self.traj_id} has no segments")
        for left, right in zip(segs, segs[1:]):
            if left.end != right.start:
                raise ValueError(f"trajectory {self.traj_id}: segments do not abut at {left.end}")
        object.__setattr__(self, "segments", segs)

    @property
    def start_frame(self) -> int:
        return self.segments[0].start

    @property
    def end_frame(self) -> int:
        return self.segments[-1].end

    def __len__(self):
        return self.end_frame - self.start_frame

    @property
    def changepoints(self) -> list[int]:
        return [s.start for s in self.segments[1:]]

    def to_track(self) -> ParamTrack:
        """Broadcast segment values over their frames."""
        lengths = [len(s) for s in self.segments]
        return ParamTrack(
            self.traj_id,
            np.repeat([s.params.alpha for s in self.segments], lengths),
            np.repeat([s.params.k for s in self.segments], lengths),
            np.repeat([int(s.state) for s in self.segments], lengths),
            start_frame=self.start_frame,
        )


def track_changepoints(track: ParamTrack) -> list[int]:
    """Absolute frames where the ``(alpha, k, state)`` triple changes."""
    a, k, s = track.alpha_t, track.k_t, track.state_t
    changed = (a[1:] != a[:-1]) | (k[1:] != k[:-1]) | (s[1:] != s[:-1])
    return [int(i) + 1 + track.start_frame for i in np.flatnonzero(changed)]


def segments_from_track(track: ParamTrack) -> SegmentedTrajectory:
    """Exact piecewise-constant decomposition of a track (used for ground truth)."""
    bounds = [track.start_frame, *track_changepoints(track), track.start_frame + len(track)]
    segs = []
    for a, b in zip(bounds, bounds[1:]):
        i = a - track.start_frame
        segs.append(
            Segment(a, b, DiffusionParams(track.alpha_t[i], track.k_t[i]), track.state_t[i])
        )
    return SegmentedTrajectory(track.traj_id, tuple(segs))


@dataclass(frozen=True)
class ExperimentGroundTruth:
    """Simulated trajectories with their per-frame truth and change points."""

    model_kind: ModelKind
    trajectories: tuple[Trajectory, ...]
    truth_tracks: tuple[ParamTrack, ...]
    changepoints: tuple[tuple[int, ...], ...]
    fov_id: int = 0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        trajs = tuple(self.trajectories)
        tracks = tuple(self.truth_tracks)
        cps = tuple(tuple(int(c) for c in cp) for cp in self.changepoints)
        if not (len(trajs) == len(tracks) == len(cps)):
            raise ValueError("trajectories, truth tracks and change points must align")
        for tr, tk, cp in zip(trajs, tracks, cps):
            if tr.id != tk.traj_id or len(tr) != len(tk) or tr.start_frame != tk.start_frame:
                raise ValueError(f"truth track does not match trajectory {tr.id}")
            if any(not tr.start_frame < c < tr.end_frame for c in cp):
                raise ValueError(f"change point outside trajectory {tr.id}")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "truth_tracks", tracks)
        object.__setattr__(self, "changepoints", cps)

    def segmented(self) -> list[SegmentedTrajectory]:
        return [segments_from_track(t) for t in self.truth_tracks]


# --- random numbers ---------------------------------------------------------


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator.

    Extra integers select an independent sub-stream, so one root seed can be
    split deterministically between pipeline stages or particles.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


# --- FOV tensors --------------------------------------------------------------


@dataclass(frozen=True)
class FovTensor:
    """Zero-padded ``(64, 208, 2)`` array of trajectories from one FOV.

    ``frame_mask`` marks real samples; without it a genuine position at the
    origin could not be told apart from padding.
    """

    data: np.ndarray
    occupancy: np.ndarray
    frame_mask: np.ndarray
    traj_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data))
        object.__setattr__(self, "occupancy", _frozen(self.occupancy, dtype=bool))
        object.__setattr__(self, "frame_mask", _frozen(self.frame_mask, dtype=bool))
        object.__setattr__(self, "traj_ids", _frozen(self.traj_ids, dtype=np.int64))

    @classmethod
    def empty(cls, n_rows=MAX_PARTICLES, n_frames=N_FRAMES):
        return cls(
            np.zeros((n_rows, n_frames, 2)),
            np.zeros(n_rows, bool),
            np.zeros((n_rows, n_frames), bool),
            np.full(n_rows, -1),
        )

    def to_trajectories(self, fov_id: int = 0) -> list[Trajectory]:
        out = []
        for r in np.flatnonzero(self.occupancy):
            cols = np.flatnonzero(self.frame_mask[r])
            out.append(Trajectory(int(self.traj_ids[r]), int(cols[0]), self.data[r, cols], fov_id))
        return out


@dataclass(frozen=True)
class Violation:
    row: int
    frame: int
    reason: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def first(self) -> Violation | None:
        return self.violations[0] if self.violations else None

    def __bool__(self):
        return self.valid


def validate_fov_tensor(t: FovTensor) -> ValidationResult:
    """Check a tensor against the padding invariants.

    Never raises; every violation is collected in row-major order.
    """
    problems: list[Violation] = []
    data = np.asarray(t.data)
    if data.ndim != 3 or data.shape[2] != 2:
        return ValidationResult((Violation(-1, -1, f"bad shape {data.shape}"),))
    n_rows, n_frames, _ = data.shape
    if t.occupancy.shape != (n_rows,) or t.frame_mask.shape != (n_rows, n_frames):
        return ValidationResult((Violation(-1, -1, "occupancy/mask shape mismatch"),))

    bad_value = ~np.isfinite(data).all(axis=2)
    nonzero = (data != 0).any(axis=2)
    for r in range(n_rows):
        mask = t.frame_mask[r]
        if not t.occupancy[r]:
            if nonzero[r].any() or mask.any():
                f = int(np.flatnonzero(nonzero[r] | mask)[0])
                problems.append(Violation(r, f, "data in unoccupied row"))
            continue
        cols = np.flatnonzero(mask)
        if len(cols) == 0:
            problems.append(Violation(r, -1, "occupied row without samples"))
            continue
        if cols[-1] - cols[0] + 1 != len(cols):
            gap = int(cols[np.flatnonzero(np.diff(cols) > 1)[0]] + 1)
            problems.append(Violation(r, gap, "gap inside trajectory"))
        outside = nonzero[r] & ~mask
        if outside.any():
            problems.append(Violation(r, int(np.flatnonzero(outside)[0]), "nonzero padding"))
        if bad_value[r].any():
            problems.append(Violation(r, int(np.flatnonzero(bad_value[r])[0]), "non-finite value"))
    return ValidationResult(tuple(problems))


def write_fov_tensor(t: FovTensor, path) -> None:
    """Raw little-endian float64 data plus a JSON header next to it."""
    import json

    path = Path(path)
    path.write_bytes(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    header = {
        "shape": list(t.data.shape),
        "dtype": "<f8",
        "order": "C",
        "occupancy": [bool(v) for v in t.occupancy],
        "traj_ids": [int(v) for v in t.traj_ids],
        "start_frames": [int(np.argmax(m)) if m.any() else -1 for m in t.frame_mask],
        "lengths": [int(m.sum()) for m in t.frame_mask],
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=1) + "\n")


def read_fov_tensor(path) -> FovTensor:
    import json

    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype=header["dtype"]).reshape(header["shape"])
    mask = np.zeros(data.shape[:2], bool)
    for r, (s, n) in enumerate(zip(header["start_frames"], header["lengths"])):
        if n > 0:
            mask[r, s : s + n] = True
    return FovTensor(data.copy(), header["occupancy"], mask, header["traj_ids"])


# --- CSV formats --------------------------------------------------------------

TRAJECTORY_HEADER = ["traj_id", "frame", "x", "y"]
PARAMTRACK_HEADER = ["traj_id", "frame", "alpha", "k", "state"]
CHANGEPOINT_HEADER = ["traj_id", "cp_frame"]


class CsvFormatError(ValueError):
    """Malformed CSV input; ``errors`` holds ``(line, message)`` pairs."""

    def __init__(self, path, errors: Sequence[tuple[int, str]]):
        self.path = str(path)
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:20])
        more = f" (+{len(self.errors) - 20} more)" if len(self.errors) > 20 else ""
        super().__init__(f"{self.path}: {lines}{more}")


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    """Yield ``(line_number, row)``; raise if the header is wrong."""
    text = Path(path).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        got = next(reader)
    except StopIteration:
        raise CsvFormatError(path, [(1, "missing header")]) from None
    if [h.strip() for h in got] != header:
        raise CsvFormatError(path, [(1, f"expected header {','.join(header)}")])
    for row in reader:
        if row:
            yield reader.line_num, row


def write_trajectories(trajs: Iterable[Trajectory], path) -> None:
    rows = (
        (t.id, f, _fmt(x), _fmt(y))
        for t in trajs
        for f, (x, y) in zip(t.frames, t.points)
    )
    _write_rows(path, TRAJECTORY_HEADER, rows)


def read_trajectories(path, fov_id: int = 0) -> list[Trajectory]:
    errors = []
    by_id: dict[int, list[tuple[int, float, float]]] = {}
    for line, row in _read_rows(path, TRAJECTORY_HEADER):
        try:
            tid, frame, x, y = int(row[0]), int(row[1]), float(row[2]), float(row[3])
        except (ValueError, IndexError):
            errors.append((line, f"cannot parse {row!r}"))
            continue
        if len(row) != 4 or not (math.isfinite(x) and math.isfinite(y)) or frame < 0:
            errors.append((line, f"invalid row {row!r}"))
            continue
        by_id.setdefault(tid, []).append((frame, x, y))
    out = []
    for tid, rows in by_id.items():
        rows.sort()
        frames = [r[0] for r in rows]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            errors.append((0, f"trajectory {tid} frames are not consecutive"))
            continue
        out.append(Trajectory(tid, frames[0], [(r[1], r[2]) for r in rows], fov_id))
    if errors:
        raise CsvFormatError(path, errors)
    return out


def write_param_tracks(tracks: Iterable[ParamTrack], path) -> None:
    rows = (
        (t.traj_id, f, _fmt(a), _fmt(k), int(s))
        for t in tracks
        for f, a, k, s in zip(t.frames, t.alpha_t, t.k_t, t.state_t)
    )
    _write_rows(path, PARAMTRACK_HEADER, rows)


def read_param_tracks(path) -> list[ParamTrack]:
    """Parse a ParamTrack CSV, reporting every bad line at once."""
    errors = []
    by_id: dict[int, list[tuple[int, float, float, int, int]]] = {}
    for line, row in _read_rows(path, PARAMTRACK_HEADER):
        if len(row) != 5:
            errors.append((line, f"expected 5 fields, got {len(row)}"))
            continue
        try:
            tid, frame = int(row[0]), int(row[1])
            a, k, s = float(row[2]), float(row[3]), int(row[4])
        except ValueError:
            errors.append((line, f"cannot parse {row!r}"))
            continue
        if s not in (0, 1, 2, 3):
            errors.append((line, f"state {s} outside 0..3"))
        elif not (math.isfinite(a) and math.isfinite(k)):
            errors.append((line, "non-finite alpha or k"))
        elif not (0 < a <= ALPHA_MAX):
            errors.append((line, f"alpha {a} outside (0, 2]"))
        elif k < 0:
            errors.append((line, f"negative k {k}"))
        else:
            by_id.setdefault(tid, []).append((frame, a, k, s, line))
    out = []
    for tid, rows in by_id.items():
        rows.sort()
        frames = [r[0] for r in rows]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            errors.append((rows[0][4], f"track {tid} frames are not consecutive"))
            continue
        arr = np.array([r[1:4] for r in rows])
        out.append(ParamTrack(tid, arr[:, 0], arr[:, 1], arr[:, 2].astype(int), frames[0]))
    if errors:
        raise CsvFormatError(path, sorted(errors))
    return out


def write_changepoints(cps: dict[int, Sequence[int]], path) -> None:
    _write_rows(path, CHANGEPOINT_HEADER, ((tid, int(c)) for tid, cs in cps.items() for c in cs))


def read_changepoints(path) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    errors = []
    for line, row in _read_rows(path, CHANGEPOINT_HEADER):
        try:
            out.setdefault(int(row[0]), []).append(int(row[1]))
        except (ValueError, IndexError):
            errors.append((line, f"cannot parse {row!r}"))
    if errors:
        raise CsvFormatError(path, errors)
    return {k: sorted(v) for k, v in out.items()}


SEGMENT_HEADER = ["traj_id", "start", "end", "alpha", "k", "state"]


def write_segments(segs: Iterable[SegmentedTrajectory], path) -> None:
    rows = (
        (st.traj_id, s.start, s.end, _fmt(s.params.alpha), _fmt(s.params.k), int(s.state))
        for st in segs
        for s in st.segments
    )
    _write_rows(path, SEGMENT_HEADER, rows)


def read_segments(path) -> list[SegmentedTrajectory]:
    errors = []
    by_id: dict[int, list[Segment]] = {}
    for line, row in _read_rows(path, SEGMENT_HEADER):
        try:
            tid, a, b = int(row[0]), int(row[1]), int(row[2])
            seg = Segment(a, b, DiffusionParams(float(row[3]), float(row[4])), int(row[5]))
        except (ValueError, IndexError) as exc:
            errors.append((line, str(exc) or f"cannot parse {row!r}"))
            continue
        by_id.setdefault(tid, []).append(seg)
    out = []
    for tid, segs in by_id.items():
        try:
            out.append(SegmentedTrajectory(tid, tuple(sorted(segs, key=lambda s: s.start))))
        except ValueError as exc:
            errors.append((0, str(exc)))
    if errors:
        raise CsvFormatError(path, errors)
    return out
