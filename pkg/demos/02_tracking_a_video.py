"""From rendered frames back to trajectories.

Run with ``python3 demos/02_tracking_a_video.py``.
"""

# %%
# Simulate a field, cut out the 128 px field of view and render each frame
# with a Gaussian point spread function.
import numpy as np

from anomdiff import make_rng
from anomdiff.simulate import RenderConfig, SimConfig, extract_fovs, render_frames, simulate_experiment

cfg = SimConfig(model="ssm", seed=5, mean_particles=200, state_params=[(0.8, 0.3)])
(fov,) = extract_fovs(simulate_experiment(cfg), cfg)
frames = render_frames(fov.trajectories, RenderConfig(noise_sigma=2.0), make_rng(5, 1))
print(frames.shape, frames.dtype, "particles in view:", len(fov.trajectories))

# %%
# Detection: band-pass filter, local maxima, then an iterated sub-pixel
# centroid.  Linking: frame-to-frame minimum-cost assignment of squared
# displacements within the search range.
from anomdiff.detect import DetectConfig, locate_stack
from anomdiff.link import link

dets = locate_stack(frames)
tracks = link([d for fr in dets for d in fr])
print("detections per frame:", np.mean([len(d) for d in dets]).round(1), "tracks:", len(tracks))

# %%
# With pixel noise the default mass threshold lets through faint noise
# peaks, each of which becomes a one-frame track.  Real spots carry a mass
# of about 300 here against about 13 for the noise, so raise the threshold.
print("track lengths below 5 frames:", sum(len(t) < 5 for t in tracks))
dets = locate_stack(frames, DetectConfig(minmass=50))
tracks = link([d for fr in dets for d in fr])
print("minmass=50 -> tracks:", len(tracks), "lengths:", sorted({len(t) for t in tracks}))

# %%
# How close are the tracked positions to the truth?
truth = {}
for t in fov.trajectories:
    for f, p in zip(t.frames, t.points):
        truth.setdefault(int(f), []).append(p)
err = []
for t in tracks:
    for f, p in zip(t.frames, t.points):
        err.append(np.linalg.norm(np.array(truth[int(f)]) - p, axis=1).min())
err = np.array(err)
print(f"within 1 px: {np.mean(err < 1):.1%}, RMSE of those: {np.sqrt(np.mean(err[err < 1] ** 2)):.3f} px")
