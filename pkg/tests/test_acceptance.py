"""Acceptance criteria, one test each, timed against its budget.

Every test records a PASS/FAIL line that is printed in the pytest terminal
summary (see conftest.py); the assertion makes a failed criterion fail the
run as well.
"""

import math
import time
from contextlib import contextmanager

import numpy as np

from anomdiff.core import DiffusionParams, ParamTrack, Trajectory, make_rng
from anomdiff.detect import locate_stack
from anomdiff.infer import estimate_params_window
from anomdiff.link import assignment_total, link, solve_assignment
from anomdiff.metrics import (
    CpMatchResult,
    combine_reports,
    evaluate_experiment,
    f1_state,
    gated_distance,
    jsc,
    mae_alpha,
    msle_k,
    pair_changepoints,
    rmse_cp,
    wasserstein1,
)
from anomdiff.segment import CpConfig, normalize_trajectory, pelt, smooth_states
from anomdiff.simulate import (
    RenderConfig,
    SimConfig,
    render_frames,
    sample_fbm_displacements,
    simulate_experiment,
)
from oracles import (
    brute_force_assignment,
    exhaustive_segmentation,
    seg_cost_l2,
    segmentation_value,
    w1_grid,
)

RESULTS: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit_s: float | None):
    """Time the body; record PASS only if it finished without error in time."""
    t0 = time.perf_counter()
    ok, detail = False, ""
    try:
        yield
        ok = limit_s is None or time.perf_counter() - t0 < limit_s
        if not ok:
            detail = f" (over the {limit_s:g} s limit)"
    except Exception as exc:
        detail = f" ({type(exc).__name__}: {exc})"
        raise
    finally:
        elapsed = time.perf_counter() - t0
        budget = f" / {limit_s:g} s" if limit_s is not None else ""
        RESULTS.append(f"{'PASS' if ok else 'FAIL'} {number}. {title} [{elapsed:.2f} s{budget}]{detail}")
    assert ok, f"criterion {number} exceeded {limit_s} s"


def close(a, b, tol=1e-12):
    assert abs(a - b) <= tol, f"{a} != {b}"


def test_1_metric_fixtures_and_self_evaluation():
    with criterion(1, "metric fixtures exact; truth vs truth is perfect on 5 experiments", 10):
        close(gated_distance(100, 104, 10), 4)
        close(gated_distance(100, 150, 10), 10)
        close(gated_distance(33, 33, 10), 0)
        m = pair_changepoints([50], [53])
        assert (m.tp, m.fp, m.fn) == (1, 0, 0)
        close(rmse_cp(m, [50], [53]), 3)
        m = pair_changepoints([50], [80])
        assert (m.tp, m.fp, m.fn) == (0, 1, 1)
        m = pair_changepoints([10, 20], [19, 11])
        assert sorted(m.pairs) == [(0, 1), (1, 0)] and m.tp == 2
        close(rmse_cp(m, [10, 20], [19, 11]), 1)
        close(rmse_cp(pair_changepoints([10], [90]), [10], [90]), 0)
        close(jsc(CpMatchResult((), (), 2, 1, 1)), 0.5)
        close(jsc(CpMatchResult((), (), 0, 4, 0)), 0)
        close(jsc(pair_changepoints([], [])), 1)
        close(mae_alpha([1.0, 0.5], [1.2, 0.4]), 0.15)
        close(mae_alpha([0.7, 1.1], [0.7, 1.1]), 0)
        close(msle_k([math.e - 1], [0.0]), 1)
        close(msle_k([0.3, 2.0], [0.3, 2.0]), 0)
        close(f1_state([0, 1, 2, 3], [0, 1, 2, 3]), 1)
        close(f1_state([0, 0, 1], [2, 3, 2]), 0)
        close(f1_state([2, 2, 1, 0], [2, 2, 1, 1]), 0.75)
        close(wasserstein1([0.5, 1.5], [0.5, 1.5]), 0)
        close(wasserstein1([0, 0, 0], [1, 1, 1]), 0)
        close(wasserstein1([0, 0, 0], [1, 1, 1], restrict=False), 1)
        close(wasserstein1([0, 1], [0, 2]), 0.5)
        assert abs(w1_grid([0, 1], [0, 2], 0, 2) - 0.5) < 1e-3

        reports = []
        for i, model in enumerate(["ssm", "msm", "dim", "tcm", "qtm"]):
            exp = simulate_experiment(SimConfig(model=model, seed=100 + i))
            reports.append(evaluate_experiment(exp.truth_tracks, exp))
        for r in reports + [combine_reports(reports)]:
            assert r.mae_alpha == r.msle_k == r.rmse_cp == 0.0
            assert r.jsc == r.f1_state == 1.0
            assert r.w1_alpha == r.w1_k == r.w1_alpha_unrestricted == r.w1_k_unrestricted == 0.0


def test_2_hungarian_against_permutations():
    with criterion(2, "assignment total equals permutation minimum on 200 matrices", 5):
        rng = np.random.default_rng(20)
        for _ in range(200):
            n, m = rng.integers(1, 7, size=2)
            # integer costs keep every total exact in floating point
            c = rng.integers(-50, 100, size=(n, m)).astype(float)
            total = assignment_total(c, solve_assignment(c))
            assert total == brute_force_assignment(c), f"{total} vs {brute_force_assignment(c)}"


def test_3_pelt_against_exhaustive_search():
    with criterion(3, "PELT objective equals exhaustive optimum on 100 series", 30):
        x = [0.0] * 8 + [5.0] * 8 + [0.0] * 8
        assert pelt(x, 1.0) == [8, 16]
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(2, 31))
            mu = np.zeros(n)
            for c in rng.choice(np.arange(1, n), min(int(rng.integers(0, 4)), n - 1), replace=False):
                mu[c:] += rng.normal(0, 3)
            x = mu + rng.normal(0, 1, n)
            pen = float(rng.uniform(0.5, 6))
            best, _ = exhaustive_segmentation(x, pen, seg_cost_l2)
            got = segmentation_value(x, pelt(x, pen), pen, seg_cost_l2)
            assert got == best, f"n={n}: {got} vs {best}"


def test_4_simulator_msd_law():
    with criterion(4, "ensemble MSD recovers alpha within 0.05 and K within 10%", 60):
        lags = np.arange(1, 201)
        for alpha in (0.5, 1.0, 1.5):
            for k in (0.5, 2.0):
                rng = make_rng(123, int(alpha * 10), int(k * 10))
                paths = np.stack(
                    [np.cumsum(sample_fbm_displacements(200, DiffusionParams(alpha, k), rng), axis=0) for _ in range(1000)]
                )
                msd = (paths**2).mean(axis=(0, 2))  # per axis, lags 1..200 from the origin
                slope, icpt = np.polyfit(np.log(lags), np.log(msd), 1)
                assert abs(slope - alpha) <= 0.05, f"alpha {alpha}: slope {slope:.4f}"
                assert abs(math.exp(icpt) / k - 1) <= 0.10, f"K {k}: fit {math.exp(icpt):.4f}"


def _tracking_fixture():
    """30 slow particles on a 20 px grid, kept within 6.5 px of their start."""
    rng = make_rng(7)
    g = np.arange(12.0, 116.0, 20.0)
    starts = np.array([(x, y) for x in g for y in g])[:30]
    trajs = []
    for i, s in enumerate(starts):
        while True:
            d = sample_fbm_displacements(207, DiffusionParams(rng.uniform(0.3, 1.2), 0.05), rng)
            p = s + np.vstack([[0.0, 0.0], np.cumsum(d, axis=0)])
            if np.abs(p - s).max() <= 6.5 and np.linalg.norm(d, axis=1).max() <= 1.0:
                break
        trajs.append(Trajectory(i, 0, p))
    return trajs, rng


def test_5_tracking_fidelity():
    with criterion(5, "detect+link recovers the partition, no swaps, coverage and RMSE", 60):
        trajs, rng = _tracking_fixture()
        P = np.stack([t.points for t in trajs])
        gaps = [np.linalg.norm(P[i] - P[j], axis=1).min() for i in range(30) for j in range(i)]
        assert min(gaps) >= 6.0
        frames = render_frames(trajs, RenderConfig(noise_sigma=0.0), rng)
        dets = [d for fr in locate_stack(frames) for d in fr]
        tracks = link(dets)

        owners, errs, covered = {}, [], set()
        for t in tracks:
            ids = set()
            for f, p in zip(t.frames, t.points):
                d = np.linalg.norm(P[:, f] - p, axis=1)
                o = int(d.argmin())
                ids.add(o)
                errs.append(d[o])
                covered.add((o, int(f)))
            owners[t.id] = ids
        swaps = sum(len(v) - 1 for v in owners.values())
        assert swaps == 0, f"{swaps} identity swaps"
        per_particle = {}
        for tid, ids in owners.items():
            per_particle.setdefault(next(iter(ids)), []).append(tid)
        assert len(tracks) == 30 and all(len(v) == 1 for v in per_particle.values()), "partition differs"
        coverage = len(covered) / P.shape[0] / P.shape[1]
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        assert coverage >= 0.95, f"coverage {coverage:.3f}"
        assert rmse <= 0.3, f"RMSE {rmse:.3f} px"


def _cp_track(rng, n=208):
    while True:
        k = int(rng.integers(0, 4))
        cps = np.sort(rng.choice(np.arange(20, n - 19), k, replace=False))
        b = [0, *cps, n]
        if all(y - x >= 20 for x, y in zip(b, b[1:])):
            break
    levels = [rng.uniform(0.2, 1.8)]
    for _ in cps:
        while True:
            a = rng.uniform(0.2, 1.8)
            if abs(a - levels[-1]) >= 0.5:
                levels.append(a)
                break
    alpha = np.repeat(levels, np.diff(b)) + rng.normal(0, 0.05, n)
    k_t = 1.0 + rng.normal(0, 0.05, n)
    return [int(c) for c in cps], ParamTrack(0, np.clip(alpha, 1e-3, 2), k_t, np.full(n, 2))


def test_6_changepoint_recall():
    with criterion(6, "default Window+L2 gives JSC >= 0.8 and RMSE <= 3 on 100 tracks", 30):
        rng = np.random.default_rng(0)
        tp = fp = fn = 0
        diffs = []
        for _ in range(100):
            cps, tk = _cp_track(rng)
            found = normalize_trajectory(tk, CpConfig()).changepoints
            m = pair_changepoints(cps, found)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            diffs += [cps[i] - found[j] for (i, j), d in zip(m.pairs, m.distances) if d < m.eps_cp]
        score = tp / (tp + fp + fn) if tp + fp + fn else 1.0
        rmse = float(np.sqrt(np.mean(np.square(diffs)))) if diffs else 0.0
        assert score >= 0.8, f"JSC {score:.3f}"
        assert rmse <= 3.0, f"RMSE {rmse:.3f}"


def test_7_baseline_estimator():
    with criterion(7, "MSD-window median MAE(alpha) <= 0.3, MSLE(K) <= 0.15 on 500 SSM", 120):
        pairs = []
        seed = 2024
        while len(pairs) < 500:
            exp = simulate_experiment(SimConfig(model="ssm", seed=seed, mean_particles=500))
            truth = {tk.traj_id: tk for tk in exp.truth_tracks}
            pairs += [(t, truth[t.id]) for t in exp.trajectories if len(t) == 208]
            seed += 1
        mae, msle = [], []
        for t, tk in pairs[:500]:
            est = estimate_params_window(t)
            mae.append(mae_alpha(tk.alpha_t, est.alpha_t))
            msle.append(msle_k(tk.k_t, est.k_t))
        assert np.median(mae) <= 0.3, f"MAE {np.median(mae):.3f}"
        assert np.median(msle) <= 0.15, f"MSLE {np.median(msle):.3f}"


def test_8_normalization_rules():
    with criterion(8, "state smoothing fixtures and two-segment normalization", None):
        assert smooth_states([2, 2, 2, 0, 2, 2, 2]).tolist() == [2] * 7
        assert smooth_states([0, 0, 0, 1, 1, 0, 0, 0]).tolist() == [0] * 8
        assert smooth_states([0, 0, 0, 1, 1, 1]).tolist() == [0, 0, 0, 1, 1, 1]
        tk = ParamTrack(0, [0.5] * 50 + [1.5] * 50, [1.0] * 100, [2] * 100)
        st = normalize_trajectory(tk)
        assert [s.params.alpha for s in st.segments] == [0.5, 1.5]
        assert abs(st.changepoints[0] - 50) <= 2


def test_9_pipeline_determinism(tmp_path):
    from anomdiff.cli import main

    with criterion(9, "pipeline --seed 1 twice gives byte-identical report.json", None):
        for name in ("a", "b"):
            assert main(["pipeline", "--seed", "1", "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a" / "report.json").read_bytes()
        b = (tmp_path / "b" / "report.json").read_bytes()
        assert a == b, "report.json differs"
