"""Synthetic experiments for the five phenomenological models.

All models share one stepping engine: every particle carries a *regime*
``(alpha, k, state)`` per frame, and the displacement from frame ``t`` to
``t + 1`` is ``sqrt(k_t)`` times the particle's current fractional Gaussian
noise chunk.  A fresh chunk is drawn whenever the regime's ``alpha`` changes,
so each constant-``alpha`` stretch is an exact fBm.

The regime recorded at frame ``t`` is the one that governs the step leaving
frame ``t``; a change point at frame ``c`` therefore means frames ``[.., c)``
and ``[c, ..)`` belong to different regimes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import fbm
from .core import (
    MAX_PARTICLES,
    N_FRAMES,
    DiffusionParams,
    DiffusionState,
    ExperimentGroundTruth,
    FovTensor,
    ModelKind,
    ParamTrack,
    Trajectory,
    make_rng,
    track_changepoints,
)

MAX_PARTICLES_PER_EXPERIMENT = 10_000


@dataclass(frozen=True)
class SimConfig:
    """Experiment geometry plus every model knob.

    The MSM transition parameterization (Dirichlet off-diagonal rows scaled
    by ``1 / mean_dwell``) is a local stand-in and not canonical.
    """

    model: ModelKind = ModelKind.SSM
    seed: int = 0
    field_size: float = 512.0
    fov_size: int = 128
    n_frames: int = N_FRAMES
    max_particles_per_fov: int = MAX_PARTICLES
    n_fovs: int = 1
    mean_particles: float = 100.0
    sigma_alpha: float = 0.3
    sigma_k: float = 0.3
    # per-particle dispersion around the state values (alpha: absolute, k: relative)
    param_spread: float = 0.05
    # fixes the state parameters instead of drawing them, e.g. [(0.5, 1.0)]
    state_params: tuple | None = None
    # MSM
    n_states: int = 2
    mean_dwell: float = 50.0
    switch_prob: float | None = None
    # DIM
    r_bind: float = 1.0
    p_bind: float = 0.5
    p_unbind: float = 0.05
    dimer_k_factor: float = 0.5
    # TCM
    n_compartments: int = 30
    compartment_radius: float = 5.0
    transmittance: float = 0.1
    confined_k_factor: float = 0.3
    # QTM
    n_traps: int = 100
    trap_radius: float = 0.5
    p_escape: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "model", ModelKind(self.model))
        if self.state_params is not None:
            object.__setattr__(
                self, "state_params", tuple(tuple(map(float, p)) for p in self.state_params)
            )
        if self.fov_size > self.field_size:
            raise ValueError("fov_size must not exceed field_size")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.mean_particles < 0:
            raise ValueError("mean_particles must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.value
        if self.state_params is not None:
            d["state_params"] = [list(p) for p in self.state_params]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown simulation options: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class RenderConfig:
    psf_sigma: float = 1.0
    particle_intensity: float = 120.0
    background: float = 20.0
    noise_sigma: float = 0.0
    bit_depth: int = 8

    def __post_init__(self):
        if min(self.psf_sigma, self.particle_intensity, self.background, self.noise_sigma) < 0:
            raise ValueError("render parameters must be >= 0")
        if self.particle_intensity + self.background > 255:
            raise ValueError("particle_intensity + background must be <= 255")
        if self.bit_depth != 8:
            raise ValueError("only 8-bit frames are supported")


# --- parameter draws ----------------------------------------------------------


def _truncnorm(rng, mean, sd, lo, hi, lo_open=True):
    if sd == 0:
        return float(np.clip(mean, lo, hi))
    while True:
        v = rng.normal(mean, sd)
        if (v > lo if lo_open else v >= lo) and v <= hi:
            return float(v)


def sample_parameters(
    model: ModelKind, rng: np.random.Generator, sigma_alpha: float = 0.3, sigma_k: float = 0.3
) -> DiffusionParams:
    """Draw one state's ``(alpha, k)``.

    ``alpha ~ N(1, sigma_alpha)`` truncated to ``(0, 2]``; ``k ~ N(1, sigma_k)``
    truncated to ``k > 0``, except for single-state experiments where ``k`` is
    uniform on ``[1e-4, 4]``.
    """
    alpha = _truncnorm(rng, 1.0, sigma_alpha, 0.0, 2.0)
    if ModelKind(model) is ModelKind.SSM:
        k = float(rng.uniform(1e-4, 4.0))
    else:
        k = _truncnorm(rng, 1.0, sigma_k, 0.0, np.inf)
    return DiffusionParams(alpha, k)


def sample_fbm_displacements(
    n: int, params: DiffusionParams, rng: np.random.Generator, dims: int = 2, method="auto"
) -> np.ndarray:
    """Increments of a ``dims``-dimensional fBm, shape ``(n, dims)``.

    Per axis ``Var[x(t) - x(0)] = k * t**alpha`` with ``t`` in frames.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > fbm.MAX_STEPS:
        raise ValueError(f"n={n} exceeds {fbm.MAX_STEPS}")
    if params.k == 0:
        return np.zeros((n, dims))
    noise = fbm.fgn(n, params.alpha / 2.0, rng, size=dims, method=method)
    return np.sqrt(params.k) * noise.T


def free_state(alpha: float) -> DiffusionState:
    return DiffusionState.DIRECTED if alpha > 1.9 else DiffusionState.FREE


def _reflect_field(p: np.ndarray, size: float) -> np.ndarray:
    p = np.mod(p, 2.0 * size)
    return np.where(p > size, 2.0 * size - p, p)


def _fold_into_disc(p, center, radius):
    v = p - center
    r = float(np.hypot(*v))
    if r < radius:
        return p
    rr = r
    while rr >= radius:
        rr = 2.0 * radius - rr
        if rr < 0:
            rr = -rr
    rr = min(rr, radius * (1.0 - 1e-9))
    return center + v * (rr / r)


# --- stepping engine ------------------------------------------------------------


class _Engine:
    """Per-particle regimes and noise for one experiment."""

    def __init__(self, cfg: SimConfig, rng: np.random.Generator, n: int):
        self.cfg, self.rng, self.n = cfg, rng, n
        T = cfg.n_frames
        self.pos = np.empty((T, n, 2))
        self.alpha = np.empty((T, n))
        self.k = np.empty((T, n))
        self.state = np.empty((T, n), dtype=np.int64)
        self.cur_alpha = np.ones(n)
        self.cur_k = np.zeros(n)
        self.cur_state = np.full(n, int(DiffusionState.FREE))
        self.noise = np.zeros((n, T, 2))

    def set_regime(self, i, alpha, k, state, t, force=False):
        if force or alpha != self.cur_alpha[i]:
            m = self.cfg.n_frames - t
            self.noise[i, t:] = fbm.fgn(m, alpha / 2.0, self.rng, size=2).T
        self.cur_alpha[i], self.cur_k[i], self.cur_state[i] = alpha, k, int(state)

    def record(self, t):
        self.alpha[t] = self.cur_alpha
        self.k[t] = self.cur_k
        self.state[t] = self.cur_state

    def displacement(self, t) -> np.ndarray:
        return np.sqrt(self.cur_k)[:, None] * self.noise[:, t]


def _particle_params(cfg, rng, state: DiffusionParams) -> tuple[float, float]:
    s = cfg.param_spread
    a = _truncnorm(rng, state.alpha, s, 0.0, 2.0)
    k = _truncnorm(rng, state.k, s * state.k, 0.0, np.inf) if state.k > 0 else 0.0
    return a, k


def _state_params(cfg: SimConfig, rng, n_states: int) -> list[DiffusionParams]:
    if cfg.state_params is not None:
        if len(cfg.state_params) < n_states:
            raise ValueError(f"state_params needs {n_states} entries")
        return [DiffusionParams(*p) for p in cfg.state_params[:n_states]]
    return [sample_parameters(cfg.model, rng, cfg.sigma_alpha, cfg.sigma_k) for _ in range(n_states)]


def _transition_matrix(cfg: SimConfig, rng, m: int) -> np.ndarray:
    if m == 1:
        return np.ones((1, 1))
    rate = cfg.switch_prob if cfg.switch_prob is not None else 1.0 / cfg.mean_dwell
    P = np.zeros((m, m))
    for i in range(m):
        off = rng.dirichlet(np.ones(m - 1))
        P[i, np.arange(m) != i] = rate * off
        P[i, i] = 1.0 - rate
    return P


def simulate_experiment(cfg: SimConfig) -> ExperimentGroundTruth:
    """Simulate one experiment over the full field."""
    rng = make_rng(cfg.seed)
    if cfg.mean_particles > MAX_PARTICLES_PER_EXPERIMENT:
        raise ValueError(f"density implies more than {MAX_PARTICLES_PER_EXPERIMENT} particles")
    n = int(rng.poisson(cfg.mean_particles))
    n = min(n, MAX_PARTICLES_PER_EXPERIMENT)
    T, L = cfg.n_frames, cfg.field_size
    model = cfg.model

    n_states = cfg.n_states if model is ModelKind.MSM else 1
    states = _state_params(cfg, rng, n_states)
    # per particle, per state (alpha, k)
    pp = np.array([[_particle_params(cfg, rng, s) for s in states] for _ in range(n)]).reshape(
        n, n_states, 2
    )
    eng = _Engine(cfg, rng, n)
    pos = rng.uniform(0.0, L, size=(n, 2))

    def free_regime(i, s=0):
        a, k = pp[i, s]
        return a, k, free_state(a)

    if model is ModelKind.MSM:
        P = _transition_matrix(cfg, rng, n_states)
        cum = np.cumsum(P, axis=1)
        cur = rng.integers(0, n_states, size=n)
        for i in range(n):
            eng.set_regime(i, *free_regime(i, cur[i]), 0, force=True)
    else:
        for i in range(n):
            eng.set_regime(i, *free_regime(i), 0, force=True)

    if model is ModelKind.TCM:
        R = cfg.compartment_radius
        centers = []
        while len(centers) < cfg.n_compartments:
            c = rng.uniform(R, L - R, size=2)
            if all(np.hypot(*(c - o)) >= 2 * R for o in centers):
                centers.append(c)
        centers = np.array(centers).reshape(-1, 2)
        ctree = cKDTree(centers) if len(centers) else None

        def compartment_of(p):
            if ctree is None:
                return -1
            d, j = ctree.query(p)
            return int(j) if d < R else -1

        comp = np.array([compartment_of(p) for p in pos], dtype=int)

        def tcm_regime(i):
            a, k, s = free_regime(i)
            if comp[i] >= 0:
                return a, k * cfg.confined_k_factor, DiffusionState.CONFINED
            return a, k, s

        for i in range(n):
            eng.set_regime(i, *tcm_regime(i), 0)

    if model is ModelKind.QTM:
        traps = rng.uniform(0.0, L, size=(cfg.n_traps, 2))
        ttree = cKDTree(traps) if len(traps) else None
        trapped_until = np.full(n, -1)
        ignore_trap = np.full(n, -1)

    if model is ModelKind.DIM:
        partner = np.full(n, -1)

    for t in range(T):
        last = t == T - 1
        # stochastic switches are skipped on the final frame; geometric ones are not
        if t > 0:
            if model is ModelKind.MSM and n_states > 1 and not last:
                u = rng.random(n)
                nxt = np.minimum((u[:, None] > cum[cur]).sum(axis=1), n_states - 1)
                for i in np.flatnonzero(nxt != cur):
                    cur[i] = nxt[i]
                    eng.set_regime(i, *free_regime(i, cur[i]), t)
            elif model is ModelKind.DIM and not last:
                for i in range(n):
                    j = partner[i]
                    if j > i and rng.random() < cfg.p_unbind:
                        partner[i] = partner[j] = -1
                        eng.set_regime(i, *free_regime(i), t, force=True)
                        eng.set_regime(j, *free_regime(j), t, force=True)
                if n > 1:
                    tree = cKDTree(pos)
                    for i, j in sorted(tree.query_pairs(cfg.r_bind)):
                        if partner[i] >= 0 or partner[j] >= 0:
                            continue
                        if rng.random() < cfg.p_bind:
                            partner[i], partner[j] = j, i
                            ai, ki = pp[i, 0]
                            aj, kj = pp[j, 0]
                            a, k = (ai, ki) if (ki, ai) <= (kj, aj) else (aj, kj)
                            k *= cfg.dimer_k_factor
                            eng.set_regime(i, a, k, free_state(a), t, force=True)
                            eng.set_regime(j, a, k, free_state(a), t, force=True)
            elif model is ModelKind.TCM:
                for i in range(n):
                    eng.set_regime(i, *tcm_regime(i), t)
            elif model is ModelKind.QTM:
                for i in range(n):
                    if trapped_until[i] == t:
                        trapped_until[i] = -1
                        eng.set_regime(i, *free_regime(i), t)
        eng.pos[t] = pos
        eng.record(t)
        if last:
            break

        step = eng.displacement(t)
        captured = []
        if model is ModelKind.DIM:
            lead = np.where((partner >= 0) & (partner < np.arange(n)), partner, np.arange(n))
            step = step[lead]
        new = _reflect_field(pos + step, L)

        if model is ModelKind.TCM:
            for i in range(n):
                c = comp[i]
                if c >= 0 and np.hypot(*(new[i] - centers[c])) >= R:
                    if rng.random() >= cfg.transmittance:
                        new[i] = _fold_into_disc(new[i], centers[c], R)
                # entering a compartment is unrestricted
                comp[i] = compartment_of(new[i])
        elif model is ModelKind.QTM and ttree is not None:
            d, j = ttree.query(new)
            for i in range(n):
                inside = d[i] < cfg.trap_radius
                if not inside:
                    ignore_trap[i] = -1
                    continue
                if trapped_until[i] >= 0 or j[i] == ignore_trap[i]:
                    continue
                ignore_trap[i] = j[i]
                dwell = int(rng.geometric(cfg.p_escape)) - 1 if cfg.p_escape > 0 else T
                if dwell > 0:
                    trapped_until[i] = t + 1 + dwell
                    captured.append(i)
        pos = new
        # trapping takes effect at frame t + 1, where the particle sits in the trap
        for i in captured:
            eng.set_regime(i, pp[i, 0, 0], 0.0, DiffusionState.IMMOBILE, t + 1)

    trajs, tracks, cps = [], [], []
    for i in range(n):
        trajs.append(Trajectory(i, 0, eng.pos[:, i]))
        tk = ParamTrack(i, eng.alpha[:, i], eng.k[:, i], eng.state[:, i])
        tracks.append(tk)
        cps.append(track_changepoints(tk))
    return ExperimentGroundTruth(model, trajs, tracks, cps)


# --- FOVs -------------------------------------------------------------------------


def fov_origins(cfg: SimConfig) -> np.ndarray:
    rng = make_rng(cfg.seed, 2)
    hi = cfg.field_size - cfg.fov_size
    return np.floor(rng.uniform(0.0, hi, size=(cfg.n_fovs, 2)))


def extract_fovs(
    experiment: ExperimentGroundTruth,
    cfg: SimConfig,
    origins: Sequence[Sequence[float]] | None = None,
    min_length: int = 1,
) -> list[ExperimentGroundTruth]:
    """Cut square fields of view out of an experiment.

    Each particle is clipped to the frames where it lies inside the FOV and
    every contiguous stretch becomes its own trajectory, so a particle that
    leaves and re-enters yields two.  Ids are renumbered per FOV and
    coordinates are relative to the FOV origin.
    """
    if origins is None:
        origins = fov_origins(cfg)
    size = cfg.fov_size
    out = []
    for fov_id, (ox, oy) in enumerate(np.asarray(origins, dtype=float).reshape(-1, 2)):
        if not (0 <= ox <= cfg.field_size - size and 0 <= oy <= cfg.field_size - size):
            raise ValueError(f"FOV origin ({ox}, {oy}) outside the field")
        trajs, tracks, cps = [], [], []
        for tr, tk in zip(experiment.trajectories, experiment.truth_tracks):
            rel = tr.points - (ox, oy)
            inside = np.all((rel >= 0) & (rel < size), axis=1)
            edges = np.diff(np.concatenate([[0], inside.astype(np.int8), [0]]))
            starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
            for a, b in zip(starts, ends):
                if b - a < min_length:
                    continue
                new_id = len(trajs)
                f0 = tr.start_frame + int(a)
                trajs.append(Trajectory(new_id, f0, rel[a:b], fov_id))
                sub = ParamTrack(new_id, tk.alpha_t[a:b], tk.k_t[a:b], tk.state_t[a:b], f0)
                tracks.append(sub)
                cps.append(track_changepoints(sub))
        out.append(
            ExperimentGroundTruth(
                experiment.model_kind, trajs, tracks, cps, fov_id=fov_id, origin=(ox, oy)
            )
        )
    return out


def to_fov_tensor(
    trajectories: Sequence[Trajectory], n_frames: int = N_FRAMES, n_rows: int = MAX_PARTICLES
) -> FovTensor:
    """Pack up to ``n_rows`` trajectories into a zero-padded tensor.

    Row ``r`` holds trajectory ``r`` at the columns of its own frames.
    Shorter recordings (e.g. 200 frames) are padded up to ``n_frames``.
    """
    if len(trajectories) > n_rows:
        raise ValueError(f"{len(trajectories)} trajectories exceed capacity {n_rows}; split first")
    data = np.zeros((n_rows, n_frames, 2))
    mask = np.zeros((n_rows, n_frames), bool)
    occ = np.zeros(n_rows, bool)
    ids = np.full(n_rows, -1)
    for r, tr in enumerate(trajectories):
        if tr.end_frame > n_frames:
            raise ValueError(f"trajectory {tr.id} ends at frame {tr.end_frame} > {n_frames}")
        data[r, tr.start_frame : tr.end_frame] = tr.points
        mask[r, tr.start_frame : tr.end_frame] = True
        occ[r] = True
        ids[r] = tr.id
    return FovTensor(data, occ, mask, ids)


def to_fov_tensors(
    trajectories: Sequence[Trajectory], n_frames: int = N_FRAMES, n_rows: int = MAX_PARTICLES
) -> list[FovTensor]:
    """Split into as many tensors as needed, in arrival order."""
    trajectories = list(trajectories)
    if not trajectories:
        return [to_fov_tensor([], n_frames, n_rows)]
    return [
        to_fov_tensor(trajectories[i : i + n_rows], n_frames, n_rows)
        for i in range(0, len(trajectories), n_rows)
    ]


# --- rendering ------------------------------------------------------------------


def render_frames(
    trajectories: Sequence[Trajectory],
    rcfg: RenderConfig,
    rng: np.random.Generator,
    n_frames: int = N_FRAMES,
    shape: tuple[int, int] = (128, 128),
) -> np.ndarray:
    """Render Gaussian spots into an 8-bit stack of shape ``(n_frames, H, W)``.

    Pixel ``(row, col)`` has its center at ``(y, x) = (row, col)``.
    """
    H, W = shape
    frames = np.full((n_frames, H, W), float(rcfg.background))
    s = rcfg.psf_sigma
    half = int(np.ceil(5 * s)) + 1
    for tr in trajectories:
        for f, (x, y) in zip(tr.frames, tr.points):
            if not 0 <= f < n_frames or s == 0:
                continue
            c0, c1 = max(int(np.floor(x)) - half, 0), min(int(np.floor(x)) + half + 2, W)
            r0, r1 = max(int(np.floor(y)) - half, 0), min(int(np.floor(y)) + half + 2, H)
            if c0 >= c1 or r0 >= r1:
                continue
            gx = np.exp(-((np.arange(c0, c1) - x) ** 2) / (2 * s * s))
            gy = np.exp(-((np.arange(r0, r1) - y) ** 2) / (2 * s * s))
            frames[f, r0:r1, c0:c1] += rcfg.particle_intensity * np.outer(gy, gx)
    if rcfg.noise_sigma > 0:
        frames += rng.normal(0.0, rcfg.noise_sigma, size=frames.shape)
    return np.rint(np.clip(frames, 0, 255)).astype(np.uint8)


def render_vip_frame(
    trajectories: Sequence[Trajectory],
    labels: dict[int, int],
    shape: tuple[int, int] = (128, 128),
    frame: int = 0,
    radius: float = 2.0,
) -> np.ndarray:
    """Label image of the VIP particles at ``frame`` (0 = background)."""
    img = np.zeros(shape, dtype=np.uint16)
    rows, cols = np.mgrid[: shape[0], : shape[1]]
    for tr in trajectories:
        if tr.id not in labels or not tr.start_frame <= frame < tr.end_frame:
            continue
        x, y = tr.points[frame - tr.start_frame]
        disc = (cols - x) ** 2 + (rows - y) ** 2 <= radius**2
        img[disc & (img == 0)] = labels[tr.id]
    return img


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    maxval = 255 if img.dtype == np.uint8 else 65535
    data = img.astype(">u2" if maxval > 255 else np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(v) for v in fields[1:])
    pos += 1
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    img = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def write_frame_stack(frames: np.ndarray, out_dir, fov_id: int, rcfg: RenderConfig) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(frames):
        write_pgm(out_dir / f"frame_{i:04d}.pgm", img)
    index = {
        "fov_id": fov_id,
        "n_frames": int(len(frames)),
        "shape": [int(v) for v in frames.shape[1:]],
        "render": dataclasses.asdict(rcfg),
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1) + "\n")


def read_frame_stack(frames_dir) -> tuple[np.ndarray, dict]:
    frames_dir = Path(frames_dir)
    index_path = frames_dir / "index.json"
    index = json.loads(index_path.read_text()) if index_path.exists() else {}
    paths = sorted(frames_dir.glob("frame_*.pgm"))
    if not paths:
        return np.zeros((0, 0, 0), np.uint8), index
    return np.stack([read_pgm(p) for p in paths]), index
