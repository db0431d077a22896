import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anomdiff.core import CsvFormatError, DiffusionState, ParamTrack, Trajectory, write_param_tracks
from anomdiff.fbm import fgn
from anomdiff.infer import (
    EstimatorConfig,
    classify_state,
    estimate_all,
    estimate_params_window,
    load_predictions,
    radius_of_gyration,
    to_displacements,
)


def fbm_path(alpha, k, n, seed):
    rng = np.random.default_rng(seed)
    steps = fgn(n - 1, alpha / 2, rng, size=2) * np.sqrt(k)
    return np.vstack([np.zeros((1, 2)), np.cumsum(steps.reshape(2, -1).T, axis=0)])


def test_displacement_fixture():
    pts = [[0, 0], [1, 2], [3, 3]]
    assert to_displacements(np.array(pts)).tolist() == [[1, 2], [2, 1]]
    assert to_displacements(Trajectory(0, 0, pts), scale=0.5).tolist() == [[0.5, 1.0], [1.0, 0.5]]


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(min_lags=0)
    with pytest.raises(ValueError):
        EstimatorConfig(window=8, min_lags=4)
    assert EstimatorConfig.from_mapping({"window": 21}).window == 21
    with pytest.raises(ValueError, match="unknown"):
        EstimatorConfig.from_mapping({"windw": 21})


def test_ballistic_path_is_directed():
    pts = np.column_stack([np.arange(100) * 0.7, np.arange(100) * 0.2])
    tk = estimate_params_window(Trajectory(0, 0, pts))
    assert np.all(np.abs(tk.alpha_t - 2.0) <= 0.05)
    assert np.all(tk.state_t == DiffusionState.DIRECTED)


def test_frozen_particle_is_immobile():
    tk = estimate_params_window(Trajectory(0, 3, np.full((60, 2), 4.0)))
    assert np.all(tk.k_t == 0.0)
    assert np.all(tk.state_t == DiffusionState.IMMOBILE)
    assert tk.start_frame == 3


def test_subdiffusive_fbm_median_alpha():
    meds = []
    for seed in range(10):
        tk = estimate_params_window(Trajectory(0, 0, fbm_path(0.5, 1.0, 200, seed)))
        meds.append(np.median(tk.alpha_t))
    assert 0.3 <= np.median(meds) <= 0.7


def test_brownian_median_k_and_alpha():
    a, k = [], []
    for seed in range(10):
        tk = estimate_params_window(Trajectory(0, 0, fbm_path(1.0, 2.0, 200, seed)))
        a.append(np.median(tk.alpha_t))
        k.append(np.median(tk.k_t))
    assert abs(np.median(a) - 1.0) < 0.15
    assert abs(np.median(k) - 2.0) < 0.4


def test_classify_state_rules():
    pos = np.cumsum(np.random.default_rng(0).normal(scale=3.0, size=(80, 2)), axis=0)
    n = len(pos)
    assert np.all(classify_state(np.ones(n), np.zeros(n), pos) == DiffusionState.IMMOBILE)
    assert np.all(classify_state(np.full(n, 1.95), np.ones(n), pos) == DiffusionState.DIRECTED)
    assert np.all(classify_state(np.ones(n), np.ones(n), pos) == DiffusionState.FREE)
    tight = np.random.default_rng(1).normal(scale=0.3, size=(80, 2))
    assert np.all(classify_state(np.ones(n), np.ones(n), tight) == DiffusionState.CONFINED)


def test_radius_of_gyration_fixture():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert radius_of_gyration(pts, 3) == pytest.approx([1.0, 1.0])


@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_scaling_positions_scales_k_quadratically(seed, c):
    pts = fbm_path(1.0, 1.0, 80, seed)
    a = estimate_params_window(Trajectory(0, 0, pts))
    b = estimate_params_window(Trajectory(0, 0, pts * c))
    assert np.allclose(b.k_t, a.k_t * c**2, rtol=1e-8)
    assert np.allclose(b.alpha_t, a.alpha_t, atol=1e-8)


def test_short_trajectory_fallback():
    pts = [[0.0, 0.0], [1.0, 1.0], [1.0, 2.0]]
    tk = estimate_params_window(Trajectory(5, 0, pts))
    assert tk.low_confidence
    assert np.all(tk.alpha_t == 1.0)
    assert tk.k_t == pytest.approx([0.75] * 3)  # mean of (2, 1) over two axes


@given(st.integers(1, 120), st.integers(0, 100))
def test_output_covers_every_frame(n, start):
    pts = np.cumsum(np.random.default_rng(n).normal(size=(n, 2)), axis=0)
    tk = estimate_params_window(Trajectory(0, start, pts))
    assert len(tk) == n and tk.start_frame == start
    assert np.all((tk.alpha_t > 0) & (tk.alpha_t <= 2)) and np.all(tk.k_t >= 0)


def test_wider_window_smooths_estimates():
    pts = fbm_path(1.0, 1.0, 208, 4)
    spread = [np.std(estimate_params_window(Trajectory(0, 0, pts), EstimatorConfig(window=w)).alpha_t) for w in (11, 31, 91)]
    assert spread[0] > spread[1] > spread[2]


def test_estimate_all_keeps_order():
    trajs = [Trajectory(i, 0, fbm_path(1.0, 1.0, 30, i)) for i in (4, 1, 9)]
    assert [t.traj_id for t in estimate_all(trajs)] == [4, 1, 9]


# --- external predictions -----------------------------------------------------------


def test_load_predictions_round_trip(tmp_path):
    trajs = [Trajectory(0, 2, np.zeros((3, 2))), Trajectory(1, 0, np.zeros((2, 2)))]
    tracks = [ParamTrack(1, [1.0, 1.0], [0.5, 0.5], [2, 2]), ParamTrack(0, [0.4] * 3, [1.0] * 3, [1] * 3, start_frame=2)]
    write_param_tracks(tracks, tmp_path / "p.csv")
    got = load_predictions(tmp_path / "p.csv", trajs)
    assert [t.traj_id for t in got] == [0, 1]
    assert got[0] == tracks[1]


def test_load_predictions_empty_file(tmp_path):
    (tmp_path / "p.csv").write_text("traj_id,frame,alpha,k,state\n")
    assert load_predictions(tmp_path / "p.csv") == []


def test_load_predictions_bad_state_reports_line(tmp_path):
    (tmp_path / "p.csv").write_text("traj_id,frame,alpha,k,state\n0,0,1.0,1.0,2\n0,1,1.0,1.0,4\n")
    with pytest.raises(CsvFormatError, match="line 3"):
        load_predictions(tmp_path / "p.csv")


def test_load_predictions_lists_all_mismatches(tmp_path):
    write_param_tracks([ParamTrack(0, [1.0] * 4, [1.0] * 4, [2] * 4), ParamTrack(7, [1.0], [1.0], [2])], tmp_path / "p.csv")
    trajs = [Trajectory(0, 0, np.zeros((3, 2))), Trajectory(1, 0, np.zeros((3, 2)))]
    with pytest.raises(CsvFormatError) as exc:
        load_predictions(tmp_path / "p.csv", trajs)
    msg = str(exc.value)
    assert "trajectory 0" in msg and "trajectory 1" in msg and "unknown trajectory 7" in msg
