"""Simulating anomalous diffusion and reading alpha off the MSD.

Run with ``python3 demos/01_anomalous_diffusion.py``.
"""

# %%
# A particle with anomalous exponent alpha spreads as MSD(t) = K t**alpha
# along each axis.  The simulator draws the increments as fractional
# Gaussian noise with Hurst index alpha / 2.
import numpy as np

from anomdiff import DiffusionParams, make_rng
from anomdiff.simulate import sample_fbm_displacements

rng = make_rng(0)
lags = np.arange(1, 101)
for alpha in (0.4, 1.0, 1.6):
    paths = np.stack(
        [np.cumsum(sample_fbm_displacements(100, DiffusionParams(alpha, 1.0), rng), axis=0) for _ in range(500)]
    )
    msd = (paths**2).mean(axis=(0, 2))
    slope, icpt = np.polyfit(np.log(lags), np.log(msd), 1)
    print(f"alpha={alpha:.1f}  fitted slope={slope:.3f}  K={np.exp(icpt):.3f}")

# %%
# Single trajectories are noisier.  The sliding-window estimator fits the
# time-averaged MSD over lags 1..4 inside a 31-frame window around every
# frame, which gives a per-frame alpha and K.
from anomdiff import Trajectory
from anomdiff.infer import estimate_params_window

pts = np.vstack([[0, 0], np.cumsum(sample_fbm_displacements(207, DiffusionParams(0.5, 2.0), rng), axis=0)])
track = estimate_params_window(Trajectory(0, 0, pts))
print("median alpha", np.median(track.alpha_t).round(3), "median K", np.median(track.k_t).round(3))

# %%
# Whole experiments come from one of five models: single state, multi state
# switching, dimerization, transient confinement and quenched traps.
from anomdiff.simulate import SimConfig, simulate_experiment

for model in ("ssm", "msm", "dim", "tcm", "qtm"):
    exp = simulate_experiment(SimConfig(model=model, seed=1))
    n_cp = sum(len(c) for c in exp.changepoints)
    print(f"{model}: {len(exp.trajectories)} trajectories, {n_cp} change points")
