"""Exact ball kernels against walk-on-spheres on a disc and a square.

Run with ``python demos/01_kernels_and_walks.py``.
"""

import numpy as np

from stablepot import kernels, sampler
from stablepot.geometry import Ball, Box, StableIndex
from stablepot.rng import RngStream

idx = StableIndex(2, 1.0)
disc = Ball([0.0, 0.0], 1.0)
x = np.array([0.4, 0.1])

# mean exit time: closed form and quadrature of the Green function
print("E[tau] closed form :", kernels.mean_exit_time_ball(idx, disc, x))
print("E[tau] quadrature  :", kernels.mean_exit_time_ball(idx, disc, x, method="quadrature"))

# harmonic measure of the halfplane {z_1 > 1}: Poisson kernel versus Monte Carlo
phi = lambda z: (z[:, 0] > 1.0).astype(float)
est = sampler.harmonic_measure(disc, idx, x, phi, 100_000, RngStream(7))
print(f"P(X_tau in z_1 > 1): {est.value:.4f} +/- {est.std_error:.4f}")

# walks on the unit square never land on its boundary
square = Box([0.0, 0.0], [1.0, 1.0])
pts, steps = sampler.exit_points(square, idx, [0.5, 0.5], 20_000, RngStream(8))
print("min |dist to boundary| of exit points:", np.abs(square.dist_to_boundary(pts)).min())
print("mean walk length:", np.mean(steps))
