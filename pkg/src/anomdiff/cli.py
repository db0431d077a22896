"""Command-line front end: one subcommand per stage plus ``pipeline``.

Every stage writes its outputs together with a ``<stage>.meta.json`` sidecar
that holds the fully resolved configuration and SHA-256 checksums of its
inputs and outputs.  Only file names relative to the output directory are
recorded and nothing time-dependent is written, so a rerun with the same
configuration reproduces every byte.

Exit codes: 0 success, 1 usage or I/O error, 2 empty result, 3 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import enum
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    CsvFormatError,
    ModelKind,
    make_rng,
    read_param_tracks,
    read_segments,
    read_trajectories,
    segments_from_track,
    write_changepoints,
    write_fov_tensor,
    write_param_tracks,
    write_segments,
    write_trajectories,
    validate_fov_tensor,
)
from .detect import DetectConfig, locate_stack, write_detections
from .infer import EstimatorConfig, estimate_all, load_predictions
from .link import LinkConfig, link, match_vips
from .metrics import EvaluationError, EvaluationReport, combine_reports, evaluate_experiment
from .segment import CpConfig, aggregate_ensemble, normalize_trajectory
from .simulate import (
    RenderConfig,
    SimConfig,
    extract_fovs,
    read_frame_stack,
    read_pgm,
    render_frames,
    render_vip_frame,
    simulate_experiment,
    to_fov_tensors,
    write_frame_stack,
    write_pgm,
)

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class EmptyResult(Exception):
    pass


class ValidationFailure(Exception):
    pass


# --- configuration ----------------------------------------------------------------


def _plain(obj):
    """JSON-ready copy of a (nested) dataclass with enums as their values."""
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _build(cls, d: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown option(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"[{section}]: {exc}") from None


@dataclass(frozen=True)
class RunOptions:
    models: tuple[str, ...] = tuple(m.value for m in ModelKind)
    per_model: int = 1
    video: bool = False
    vips_per_fov: int = 15
    predictor: str = "msd"
    n_states: int | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(ModelKind(m).value for m in self.models))
        if self.per_model < 1 or self.jobs < 1:
            raise ValueError("per_model and jobs must be >= 1")
        if self.predictor not in ("msd", "file"):
            raise ValueError(f"unknown predictor {self.predictor!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run depends on, serializable to a single file."""

    seed: int = 0
    simulate: SimConfig = field(default_factory=SimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    segment: CpConfig = field(default_factory=CpConfig)
    run: RunOptions = field(default_factory=RunOptions)

    SECTIONS = {
        "simulate": SimConfig,
        "render": RenderConfig,
        "detect": DetectConfig,
        "link": LinkConfig,
        "estimator": EstimatorConfig,
        "segment": CpConfig,
        "run": RunOptions,
    }

    def to_dict(self) -> dict:
        d = _plain(self)
        d["simulate"].pop("seed", None)  # the root seed lives at top level
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        unknown = set(d) - set(cls.SECTIONS) - {"seed"}
        if unknown:
            raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        seed = int(d.get("seed", 0))
        parts = {}
        for name, sub in cls.SECTIONS.items():
            values = dict(d.get(name, {}))
            if name == "simulate":
                values["seed"] = seed
            if name == "run" and "models" in values:
                values["models"] = tuple(values["models"])
            parts[name] = _build(sub, values, name)
        return cls(seed=seed, **parts)


def load_config_file(path) -> dict:
    """Read a JSON or TOML configuration file into a plain dict."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _set(d: dict, section: str, key: str, value) -> None:
    if value is not None:
        d.setdefault(section, {})[key] = value


def resolve_config(args) -> PipelineConfig:
    """Config file first, then command-line flags on top."""
    d = load_config_file(args.config) if getattr(args, "config", None) else {}
    est = getattr(args, "estimator_config", None)
    if est:
        d.setdefault("estimator", {}).update(load_config_file(est))
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    a = vars(args)
    for flag, (section, key) in _FLAG_KEYS.items():
        _set(d, section, key, a.get(flag))
    if a.get("model"):
        d.setdefault("run", {})["models"] = [a["model"]] if a["model"] != "all" else list(
            m.value for m in ModelKind
        )
    if a.get("video"):
        d.setdefault("run", {})["video"] = True
    return PipelineConfig.from_dict(d)


_FLAG_KEYS = {
    "fovs": ("simulate", "n_fovs"),
    "mean_particles": ("simulate", "mean_particles"),
    "n_frames": ("simulate", "n_frames"),
    "per_model": ("run", "per_model"),
    "vips": ("run", "vips_per_fov"),
    "predictor": ("run", "predictor"),
    "n_states": ("run", "n_states"),
    "jobs": ("run", "jobs"),
    "diameter": ("detect", "diameter"),
    "minmass": ("detect", "minmass"),
    "separation": ("detect", "separation"),
    "search_range": ("link", "search_range"),
    "memory": ("link", "memory"),
    "window": ("estimator", "window"),
    "cp_algo": ("segment", "algorithm"),
    "cp_cost": ("segment", "cost"),
    "penalty": ("segment", "penalty"),
    "cp_window": ("segment", "window_width"),
    "min_segment": ("segment", "min_segment"),
    "noise": ("render", "noise_sigma"),
}


# --- provenance -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_meta(
    out_dir: Path, stage: str, cfg: PipelineConfig, inputs: dict, outputs: Sequence[str], **extra
):
    """Record config plus input/output checksums next to a stage's outputs."""
    meta = {
        **extra,
        "stage": stage,
        "config": cfg.to_dict(),
        "inputs": {
            role: {"name": Path(p).name, "sha256": sha256_file(p)} for role, p in inputs.items()
        },
        "outputs": {name: sha256_file(out_dir / name) for name in outputs},
    }
    _dump_json(meta, out_dir / f"{stage}.meta.json")


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{path}: {what} not found")
    return path


# --- stages ---------------------------------------------------------------------


def experiment_seed(root: int, model: str, rep: int) -> int:
    """Independent, reproducible seed for one experiment of a batch."""
    idx = [m.value for m in ModelKind].index(model)
    return int(np.random.SeedSequence(root, spawn_key=(1, idx, rep)).generate_state(1)[0])


def _vip_labels(trajectories, n: int) -> dict[int, int]:
    """First ``n`` trajectories present at frame 0 become VIPs, label = id + 1."""
    present = [t.id for t in trajectories if t.start_frame == 0]
    return {tid: tid + 1 for tid in sorted(present)[:n]}


def run_simulation(cfg: PipelineConfig, sim: SimConfig, out_dir: Path) -> list[Path]:
    """Simulate one experiment and write every FOV to ``out_dir/fov_XXX``."""
    exp = simulate_experiment(sim)
    fovs = extract_fovs(exp, sim)
    dirs = []
    for fov in fovs:
        d = out_dir / f"fov_{fov.fov_id:03d}"
        d.mkdir(parents=True, exist_ok=True)
        write_trajectories(fov.trajectories, d / "trajectories.csv")
        write_param_tracks(fov.truth_tracks, d / "truth_tracks.csv")
        write_changepoints(
            {tk.traj_id: cp for tk, cp in zip(fov.truth_tracks, fov.changepoints)},
            d / "changepoints.csv",
        )
        write_segments(fov.segmented(), d / "truth_segments.csv")
        outputs = ["trajectories.csv", "truth_tracks.csv", "changepoints.csv", "truth_segments.csv"]
        for i, tensor in enumerate(to_fov_tensors(fov.trajectories, n_frames=max(sim.n_frames, 208))):
            res = validate_fov_tensor(tensor)
            if not res.valid:
                raise ValidationFailure(f"{d.name}: tensor {i} invalid at {res.first}")
            write_fov_tensor(tensor, d / f"tensor_{i:02d}.bin")
            outputs += [f"tensor_{i:02d}.bin", f"tensor_{i:02d}.json"]
        if cfg.run.video:
            render_fov(cfg, fov.trajectories, sim.seed, fov.fov_id, sim.n_frames, sim.fov_size, d)
            outputs += ["vip.pgm"]
        write_meta(d, "simulate", cfg, {}, outputs, model=sim.model.value, experiment_seed=sim.seed)
        dirs.append(d)
    return dirs


def render_fov(cfg, trajectories, seed, fov_id, n_frames, size, out_dir: Path) -> None:
    frames = render_frames(
        trajectories, cfg.render, make_rng(seed, 3, fov_id), n_frames, (size, size)
    )
    write_frame_stack(frames, out_dir / "frames", fov_id, cfg.render)
    labels = _vip_labels(trajectories, cfg.run.vips_per_fov)
    write_pgm(out_dir / "vip.pgm", render_vip_frame(trajectories, labels, (size, size)))


def run_tracking(cfg: PipelineConfig, frames_dir: Path, out_dir: Path, vip_path=None):
    frames, index = read_frame_stack(frames_dir)
    if len(frames) == 0:
        raise EmptyResult(f"{frames_dir}: no frame_*.pgm files")
    dets = locate_stack(frames, cfg.detect)
    flat = [d for fr in dets for d in fr]
    if not flat:
        raise EmptyResult(f"{frames_dir}: no particles detected")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_detections(flat, out_dir / "detections.csv")
    trajs = link(flat, cfg.link, fov_id=int(index.get("fov_id", 0)))
    write_trajectories(trajs, out_dir / "trajectories.csv")
    outputs = ["detections.csv", "trajectories.csv"]
    inputs = {"index": frames_dir / "index.json"} if (frames_dir / "index.json").exists() else {}
    mapping = None
    if vip_path is not None:
        vip = read_pgm(vip_path)
        match = match_vips(vip, trajs, frame=0, max_distance=cfg.link.search_range)
        mapping = match.mapping
        with open(out_dir / "vip_map.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "traj_id"])
            for lab in sorted(set(mapping) | set(match.unmatched)):
                w.writerow([lab, mapping.get(lab, -1)])
        outputs.append("vip_map.csv")
        inputs["vip"] = vip_path
    write_meta(out_dir, "track", cfg, inputs, outputs)
    return trajs, mapping


def run_inference(cfg: PipelineConfig, traj_path: Path, out_dir: Path, predictions=None, scale=1.0):
    trajs = read_trajectories(traj_path)
    if not trajs:
        raise EmptyResult(f"{traj_path}: no trajectories")
    inputs = {"trajectories": traj_path}
    if cfg.run.predictor == "file":
        if predictions is None:
            raise UsageError("--predictor file needs --predictions PATH")
        tracks = load_predictions(_require(predictions, "predictions file"), trajs)
        inputs["predictions"] = Path(predictions)
    elif cfg.run.predictor == "msd":
        if scale != 1.0:
            trajs = [dataclasses.replace(t, points=t.points * scale) for t in trajs]
        tracks = estimate_all(trajs, cfg.estimator)
    else:
        raise UsageError(f"unknown predictor {cfg.run.predictor!r}")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_param_tracks(tracks, out_dir / "param_tracks.csv")
    write_meta(out_dir, "infer", cfg, inputs, ["param_tracks.csv"])
    return tracks


def _histogram_rows(segs, bins=20):
    alpha = np.array([s.params.alpha for st in segs for s in st.segments])
    k = np.array([s.params.k for st in segs for s in st.segments])
    rows = []
    for name, vals, rng in (("alpha", alpha, (0.0, 2.0)), ("k", k, (0.0, max(k.max(), 1e-12)))):
        counts, edges = np.histogram(vals, bins=bins, range=rng)
        rows += [(name, repr(float(a)), repr(float(b)), int(c)) for a, b, c in zip(edges, edges[1:], counts)]
    return rows


def run_segmentation(cfg: PipelineConfig, tracks_path: Path, out_dir: Path):
    tracks = read_param_tracks(tracks_path)
    if not tracks:
        raise EmptyResult(f"{tracks_path}: no parameter tracks")
    segs = [normalize_trajectory(tk, cfg.segment) for tk in tracks]
    out_dir.mkdir(parents=True, exist_ok=True)
    write_segments(segs, out_dir / "segments.csv")
    summary = aggregate_ensemble(segs, n_states=cfg.run.n_states)
    _dump_json({"config": cfg.to_dict(), "ensemble": summary.to_dict()}, out_dir / "ensemble.json")
    with open(out_dir / "histograms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "bin_lo", "bin_hi", "count"])
        w.writerows(_histogram_rows(segs))
    write_meta(
        out_dir, "segment", cfg, {"tracks": tracks_path},
        ["segments.csv", "ensemble.json", "histograms.csv"],
    )
    return segs


def _read_segmented(path: Path):
    """Segments CSV or ParamTrack CSV, whichever the header says."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header.startswith("traj_id,frame,"):
        return [segments_from_track(t) for t in read_param_tracks(path)]
    return read_segments(path)


REPORT_COLUMNS = ("experiment", "model") + EvaluationReport.CSV_COLUMNS


def _report_row(name, model, rep: EvaluationReport):
    d = rep.to_dict()
    return [name, model] + [d[c] if c == "n_trajs" else repr(float(d[c])) for c in EvaluationReport.CSV_COLUMNS]


def write_report(cfg: PipelineConfig, entries, combined: EvaluationReport, out_dir: Path, inputs=None):
    """``report.json`` (with config echo) and ``report.csv`` (one row per experiment)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(
        {
            "config": cfg.to_dict(),
            "experiments": [{"experiment": n, "model": m, **r.to_dict()} for n, m, r in entries],
            "combined": combined.to_dict(),
        },
        out_dir / "report.json",
    )
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for n, m, r in entries:
            w.writerow(_report_row(n, m, r))
        if len(entries) > 1:
            w.writerow(_report_row("combined", "", combined))
    write_meta(out_dir, "evaluate", cfg, inputs or {}, ["report.json", "report.csv"])


def run_evaluation(cfg: PipelineConfig, pred_path: Path, truth_path: Path, out_dir: Path):
    pred = _read_segmented(pred_path)
    truth = _read_segmented(truth_path)
    if not truth:
        raise EmptyResult(f"{truth_path}: no trajectories")
    try:
        rep = evaluate_experiment(pred, truth)
    except EvaluationError as exc:
        raise ValidationFailure(str(exc)) from None
    write_report(cfg, [(pred_path.parent.name or "experiment", "", rep)], rep, out_dir,
                 {"predictions": pred_path, "truth": truth_path})
    return rep


# --- pipeline ----------------------------------------------------------------


def _relabel_vips(segs, mapping: dict[int, int]):
    """Predictions for tracked VIPs, renamed to their truth ids (label - 1)."""
    by_track = {st.traj_id: st for st in segs}
    out = []
    for label, tid in sorted(mapping.items()):
        if tid in by_track:
            out.append(dataclasses.replace(by_track[tid], traj_id=label - 1))
    return out


def run_experiment(job) -> tuple[str, str, EvaluationReport | None]:
    """Simulate, (track,) infer, segment and score one experiment."""
    cfg_dict, name, model, seed, out_root = job
    cfg = PipelineConfig.from_dict(cfg_dict)
    sim = dataclasses.replace(cfg.simulate, model=ModelKind(model), seed=seed)
    exp_dir = Path(out_root) / name
    reports = []
    for fov_dir in run_simulation(cfg, sim, exp_dir):
        truth = read_segments(fov_dir / "truth_segments.csv")
        if not truth:
            continue
        traj_path = fov_dir / "trajectories.csv"
        mapping = None
        if cfg.run.video:
            try:
                _, mapping = run_tracking(cfg, fov_dir / "frames", fov_dir / "track", fov_dir / "vip.pgm")
            except EmptyResult:
                continue
            traj_path = fov_dir / "track" / "trajectories.csv"
        run_inference(cfg, traj_path, fov_dir / "infer")
        segs = run_segmentation(cfg, fov_dir / "infer" / "param_tracks.csv", fov_dir / "segment")
        if mapping is not None:
            segs = _relabel_vips(segs, mapping)
            wanted = {st.traj_id for st in segs}
            truth = [st for st in truth if st.traj_id in wanted]
            if not segs:
                continue
        reports.append(evaluate_experiment(segs, truth))
    if not reports:
        return name, model, None
    return name, model, combine_reports(reports)


def run_pipeline(cfg: PipelineConfig, out_dir: Path) -> EvaluationReport:
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg.to_dict(), out_dir / "config.json")
    jobs = [
        (cfg.to_dict() | {"seed": cfg.seed}, f"{m}_{r:02d}", m, experiment_seed(cfg.seed, m, r), str(out_dir))
        for m in cfg.run.models
        for r in range(cfg.run.per_model)
    ]
    if cfg.run.jobs > 1:
        with ProcessPoolExecutor(cfg.run.jobs) as pool:
            results = list(pool.map(run_experiment, jobs))
    else:
        results = [run_experiment(j) for j in jobs]
    entries = [(n, m, r) for n, m, r in results if r is not None]
    if not entries:
        raise EmptyResult("no experiment produced any trajectories")
    combined = combine_reports([r for _, _, r in entries])
    write_report(cfg, entries, combined, out_dir, {"config": out_dir / "config.json"})
    return combined


# --- argument parsing ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, *flags):
    p.add_argument("--config", help="JSON or TOML file; flags override its values")
    p.add_argument("--seed", type=int)
    for f in flags:
        _FLAG_ADDERS[f](p)


_FLAG_ADDERS = {
    "sim": lambda p: (
        p.add_argument("--model", choices=[m.value for m in ModelKind] + ["all"]),
        p.add_argument("--fovs", type=int),
        p.add_argument("--mean-particles", type=float),
        p.add_argument("--n-frames", type=int),
        p.add_argument("--per-model", type=int, help="experiments per model (batch layout)"),
        p.add_argument("--video", action="store_true", help="also render PGM frames"),
        p.add_argument("--vips", type=int, help="VIP particles per FOV"),
        p.add_argument("--noise", type=float, help="Gaussian pixel noise sigma"),
    ),
    "track": lambda p: (
        p.add_argument("--diameter", type=int),
        p.add_argument("--minmass", type=float),
        p.add_argument("--separation", type=float),
        p.add_argument("--search-range", type=float),
        p.add_argument("--memory", type=int),
    ),
    "infer": lambda p: (
        p.add_argument("--predictor", choices=["msd", "file"]),
        p.add_argument("--window", type=int, help="estimator window in frames"),
        p.add_argument("--estimator-config", help="TOML file of estimator key = value pairs"),
    ),
    "segment": lambda p: (
        p.add_argument("--cp-algo", choices=["pelt", "binseg", "bottomup", "window"]),
        p.add_argument("--cp-cost", choices=["l1", "l2", "linear"]),
        p.add_argument("--penalty", type=float),
        p.add_argument("--cp-window", type=int, help="window detector width in frames"),
        p.add_argument("--min-segment", type=int),
        p.add_argument("--n-states", type=int, choices=[1, 2]),
    ),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anomdiff", description="Anomalous diffusion analysis pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate experiments and write ground truth")
    _common(s, "sim")
    s.add_argument("--out", required=True)

    s = sub.add_parser("render", help="render PGM frames for a trajectory CSV")
    _common(s, "sim")
    s.add_argument("--traj", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fov-id", type=int, default=0)

    s = sub.add_parser("track", help="detect and link particles in a frame stack")
    _common(s, "track")
    s.add_argument("--frames", required=True)
    s.add_argument("--vip", help="VIP label PGM for frame 0")
    s.add_argument("--out", required=True)

    s = sub.add_parser("infer", help="per-frame parameter tracks")
    _common(s, "infer")
    s.add_argument("--traj", required=True)
    s.add_argument("--predictions", help="ParamTrack CSV for --predictor file")
    s.add_argument("--scale", type=float, default=1.0, help="multiplier on positions")
    s.add_argument("--out", required=True)

    s = sub.add_parser("segment", help="change points, segments and ensemble summary")
    _common(s, "segment")
    s.add_argument("--tracks", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("evaluate", help="score predictions against ground truth")
    _common(s)
    s.add_argument("--pred", required=True, help="segments or ParamTrack CSV")
    s.add_argument("--truth", required=True, help="segments or ParamTrack CSV")
    s.add_argument("--out", required=True)

    s = sub.add_parser("pipeline", help="simulate, analyse and score in one go")
    _common(s, "sim", "track", "infer", "segment")
    s.add_argument("--jobs", type=int, help="experiments processed in parallel")
    s.add_argument("--out", required=True)
    return p


def _cmd_simulate(args, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(cfg.to_dict(), out / "config.json")
    if args.per_model is None and len(cfg.run.models) == 1:
        sim = dataclasses.replace(cfg.simulate, model=ModelKind(cfg.run.models[0]))
        run_simulation(cfg, sim, out)
        return EXIT_OK
    for m in cfg.run.models:
        for r in range(cfg.run.per_model):
            sim = dataclasses.replace(cfg.simulate, model=ModelKind(m), seed=experiment_seed(cfg.seed, m, r))
            run_simulation(cfg, sim, out / f"{m}_{r:02d}")
    return EXIT_OK


def _cmd_render(args, cfg: PipelineConfig) -> int:
    traj_path = _require(args.traj, "trajectory file")
    trajs = read_trajectories(traj_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    size = cfg.simulate.fov_size
    render_fov(cfg, trajs, cfg.seed, args.fov_id, cfg.simulate.n_frames, size, out)
    write_meta(out, "render", cfg, {"trajectories": traj_path}, ["vip.pgm", "frames/index.json"])
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return _cmd_simulate(args, cfg)
        if args.command == "render":
            return _cmd_render(args, cfg)
        if args.command == "track":
            run_tracking(cfg, _require(args.frames, "frames directory"), Path(args.out),
                         _require(args.vip, "VIP image") if args.vip else None)
        elif args.command == "infer":
            run_inference(cfg, _require(args.traj, "trajectory file"), Path(args.out),
                          args.predictions, args.scale)
        elif args.command == "segment":
            run_segmentation(cfg, _require(args.tracks, "parameter track file"), Path(args.out))
        elif args.command == "evaluate":
            run_evaluation(cfg, _require(args.pred, "prediction file"),
                           _require(args.truth, "truth file"), Path(args.out))
        elif args.command == "pipeline":
            run_pipeline(cfg, Path(args.out))
        return EXIT_OK
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyResult as exc:
        print(f"empty result: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ValidationFailure, CsvFormatError, EvaluationError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
