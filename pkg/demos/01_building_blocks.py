"""
The pieces, one at a time
=========================

Each stage of the fit works on its own: fit a disc to a noisy patch, tilt
it until every point sits in a thin slab, then round a nearly-projector
matrix to an exact one.
"""
import numpy as np

from manifit.discs import Disc, disc_hausdorff, disc_points_hausdorff, find_disc, fine_tune_disc
from manifit.outman import spectral_high_projection

rng = np.random.default_rng(0)

# %% A noisy patch of a plane in R^5, seen through the unit ball at the origin
frame = np.linalg.qr(rng.standard_normal((5, 2)))[0]
t = rng.uniform(-1, 1, (3000, 2))
t = t[np.linalg.norm(t, axis=1) <= 1]
patch = t @ frame.T + 0.02 * rng.standard_normal((len(t), 5))
center = np.zeros(5)
local = np.vstack([center, patch[np.linalg.norm(patch, axis=1) <= 1]])

truth = Disc(center, frame, 1.0)
delta = disc_points_hausdorff(truth, local)
disc, report = find_disc(local, center, 1.0, 2)
print(f"points vs true disc:       {delta:.4f}")
print(f"greedy disc vs true disc:  {disc_hausdorff(disc, truth):.4f}  (basis {report.basis_points})")

# %% Tilting: ask for every point within 2 * 0.05 of the disc
tuned = fine_tune_disc(local, disc, 0.05)
print(f"tuned disc vs true disc:   {disc_hausdorff(tuned, truth):.4f}")

# %% Averaging two nearby rank-3 projectors and rounding back
P = np.diag([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
S = 0.05 * rng.standard_normal((6, 6))
Q = np.linalg.qr(np.eye(6) + S - S.T)[0]
A = (P + Q @ P @ Q.T) / 2
R = spectral_high_projection(A, 3)
print(f"eigenvalues of the average: {np.round(np.linalg.eigvalsh(A), 3)}")
print(f"rounded: |R^2 - R| = {np.abs(R @ R - R).max():.1e}, trace {np.trace(R):.6f}")
