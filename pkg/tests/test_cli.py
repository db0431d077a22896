import csv
import json
from pathlib import Path

import numpy as np
import pytest

from anomdiff.cli import EXIT_EMPTY, EXIT_INVALID, EXIT_OK, EXIT_USAGE, main
from anomdiff.core import read_segments, read_trajectories
from anomdiff.simulate import write_pgm

SMALL = ["--mean-particles", "100", "--seed", "1"]


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def simulate(out, *extra):
    assert main(["simulate", "--model", "ssm", *SMALL, "--out", str(out), *extra]) == EXIT_OK
    return out / "fov_000"


def test_simulate_twice_is_byte_identical(tmp_path):
    simulate(tmp_path / "a")
    simulate(tmp_path / "b")
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a.keys() == b.keys() and a == b
    for name in ("trajectories.csv", "truth_tracks.csv", "changepoints.csv", "tensor_00.bin", "simulate.meta.json"):
        assert f"fov_000/{name}" in a


def test_msm_five_fovs(tmp_path):
    out = tmp_path / "m"
    assert main(["simulate", "--model", "msm", "--fovs", "5", *SMALL, "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir() if p.is_dir()) == [f"fov_{i:03d}" for i in range(5)]


def test_meta_records_no_absolute_paths(tmp_path):
    fov = simulate(tmp_path / "s")
    main(["infer", "--traj", str(fov / "trajectories.csv"), "--out", str(tmp_path / "i")])
    text = (tmp_path / "i" / "infer.meta.json").read_text()
    assert str(tmp_path) not in text
    meta = json.loads(text)
    assert meta["inputs"]["trajectories"]["name"] == "trajectories.csv"
    assert len(meta["outputs"]["param_tracks.csv"]) == 64


def test_evaluate_truth_against_truth(tmp_path):
    fov = simulate(tmp_path / "s")
    out = tmp_path / "e"
    truth = str(fov / "truth_segments.csv")
    assert main(["evaluate", "--pred", truth, "--truth", truth, "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())["combined"]
    assert rep["jsc"] == 1.0 and rep["f1_state"] == 1.0
    assert rep["rmse_cp"] == rep["mae_alpha"] == rep["msle_k"] == rep["w1_alpha"] == rep["w1_k"] == 0.0


def test_infer_segment_evaluate_chain(tmp_path):
    fov = simulate(tmp_path / "s")
    assert main(["infer", "--traj", str(fov / "trajectories.csv"), "--out", str(tmp_path / "i")]) == EXIT_OK
    assert main(["segment", "--tracks", str(tmp_path / "i/param_tracks.csv"), "--out", str(tmp_path / "g")]) == EXIT_OK
    rc = main(["evaluate", "--pred", str(tmp_path / "g/segments.csv"),
               "--truth", str(fov / "truth_tracks.csv"), "--out", str(tmp_path / "e")])
    assert rc == EXIT_OK
    rows = list(csv.reader((tmp_path / "e/report.csv").open()))
    assert rows[0][:3] == ["experiment", "model", "n_trajs"] and len(rows) == 2
    ens = json.loads((tmp_path / "g/ensemble.json").read_text())
    assert abs(sum(ens["ensemble"]["weights"]) - 1.0) < 1e-12


@pytest.mark.parametrize("algo", ["pelt", "window"])
def test_segment_output_partitions_every_track(tmp_path, algo):
    fov = simulate(tmp_path / "s")
    out = tmp_path / algo
    assert main(["segment", "--tracks", str(fov / "truth_tracks.csv"), "--cp-algo", algo, "--out", str(out)]) == EXIT_OK
    trajs = {t.id: t for t in read_trajectories(fov / "trajectories.csv")}
    for st in read_segments(out / "segments.csv"):
        t = trajs[st.traj_id]
        assert st.start_frame == t.start_frame and st.end_frame == t.end_frame
        assert all(a.end == b.start for a, b in zip(st.segments, st.segments[1:]))
    meta = json.loads((out / "segment.meta.json").read_text())
    assert meta["config"]["segment"]["algorithm"] == algo


def test_config_file_and_flag_override(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 5, "segment": {"algorithm": "binseg", "min_segment": 4}}))
    (tmp_path / "c.toml").write_text('seed = 5\n[segment]\nalgorithm = "binseg"\nmin_segment = 4\n')
    fov = simulate(tmp_path / "s")
    for name in ("c.json", "c.toml"):
        out = tmp_path / name.replace(".", "_")
        rc = main(["segment", "--config", str(tmp_path / name), "--min-segment", "6",
                   "--tracks", str(fov / "truth_tracks.csv"), "--out", str(out)])
        assert rc == EXIT_OK
        seg = json.loads((out / "segment.meta.json").read_text())["config"]["segment"]
        assert seg["algorithm"] == "binseg" and seg["min_segment"] == 6


def test_estimator_toml(tmp_path):
    fov = simulate(tmp_path / "s")
    (tmp_path / "e.toml").write_text("window = 21\n")
    rc = main(["infer", "--estimator-config", str(tmp_path / "e.toml"),
               "--traj", str(fov / "trajectories.csv"), "--out", str(tmp_path / "i")])
    assert rc == EXIT_OK
    assert json.loads((tmp_path / "i/infer.meta.json").read_text())["config"]["estimator"]["window"] == 21


# --- exit codes -----------------------------------------------------------------------


def test_usage_errors_exit_1(tmp_path):
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["infer", "--traj", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_USAGE
    (tmp_path / "c.json").write_text('{"segment": {"colour": 1}}')
    assert main(["simulate", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_blank_video_exits_2(tmp_path):
    frames = tmp_path / "frames"
    frames.mkdir()
    for i in range(3):
        write_pgm(frames / f"frame_{i:04d}.pgm", np.full((32, 32), 20, np.uint8))
    assert main(["track", "--frames", str(frames), "--out", str(tmp_path / "t")]) == EXIT_EMPTY


def test_malformed_csv_exits_3(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("traj_id,frame,alpha,k,state\n0,0,1.0,1.0,2\n0,1,1.0,1.0,9\n")
    rc = main(["segment", "--tracks", str(tmp_path / "p.csv"), "--out", str(tmp_path / "g")])
    assert rc == EXIT_INVALID
    assert "line 3" in capsys.readouterr().err


def test_mismatched_ids_exit_3(tmp_path):
    (tmp_path / "a.csv").write_text("traj_id,frame,alpha,k,state\n0,0,1.0,1.0,2\n")
    (tmp_path / "b.csv").write_text("traj_id,frame,alpha,k,state\n1,0,1.0,1.0,2\n")
    rc = main(["evaluate", "--pred", str(tmp_path / "a.csv"), "--truth", str(tmp_path / "b.csv"), "--out", str(tmp_path / "e")])
    assert rc == EXIT_INVALID


# --- video ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tracked_video(tmp_path_factory):
    root = tmp_path_factory.mktemp("video")
    fov = root / "sim" / "fov_000"
    rc = main(["simulate", "--model", "ssm", "--mean-particles", "200", "--seed", "3",
               "--video", "--out", str(root / "sim")])
    assert rc == EXIT_OK
    rc = main(["track", "--frames", str(fov / "frames"), "--vip", str(fov / "vip.pgm"), "--out", str(root / "trk")])
    assert rc == EXIT_OK
    return fov, root / "trk"


def test_tracking_covers_true_particle_frames(tracked_video):
    fov, trk = tracked_video
    truth = read_trajectories(fov / "trajectories.csv")
    got = read_trajectories(trk / "trajectories.csv")
    by_frame: dict[int, list] = {}
    for t in got:
        for f, p in zip(t.frames, t.points):
            by_frame.setdefault(int(f), []).append(p)
    total = hit = 0
    for t in truth:
        for f, p in zip(t.frames, t.points):
            total += 1
            pts = np.array(by_frame.get(int(f), [[np.inf, np.inf]]))
            hit += np.hypot(*(pts - p).T).min() < 1.5
    assert total > 0 and hit / total >= 0.9


def test_vip_map_has_one_row_per_label(tracked_video):
    from anomdiff.simulate import read_pgm

    fov, trk = tracked_video
    labels = sorted(int(v) for v in np.unique(read_pgm(fov / "vip.pgm")) if v)
    rows = list(csv.reader((trk / "vip_map.csv").open()))
    assert rows[0] == ["label", "traj_id"]
    assert [int(r[0]) for r in rows[1:]] == labels
    assert len(labels) > 0
