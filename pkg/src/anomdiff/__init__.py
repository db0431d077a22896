"""Simulation, tracking, parameter inference, segmentation and scoring of
anomalous diffusion trajectories."""

from .core import (
    DiffusionParams,
    DiffusionState,
    ExperimentGroundTruth,
    FovTensor,
    ModelKind,
    ParamTrack,
    Segment,
    SegmentedTrajectory,
    Trajectory,
    make_rng,
    validate_fov_tensor,
)
from .detect import DetectConfig, Detection, locate
from .infer import EstimatorConfig, estimate_all, estimate_params_window
from .link import LinkConfig, link, solve_assignment
from .metrics import EvaluationReport, evaluate_experiment
from .segment import CpConfig, aggregate_ensemble, detect_changepoints, normalize_trajectory
from .simulate import RenderConfig, SimConfig, simulate_experiment

__version__ = "0.1.0"
