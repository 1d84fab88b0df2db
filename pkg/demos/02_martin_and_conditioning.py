"""Martin kernels from walks, and paths conditioned to exit at a boundary point.

Run with ``python demos/02_martin_and_conditioning.py``.
"""

import numpy as np

from stablepot import conditioned, kernels, martin
from stablepot.geometry import Ball, StableIndex
from stablepot.rng import RngStream

idx = StableIndex(2, 1.5)
disc = Ball([0.0, 0.0], 1.0)
x0, x, z = np.zeros(2), np.array([0.3, 0.2]), np.array([0.0, 1.0])

# the ratio G(x, y) / G(x0, y) as y -> z, estimated by Monte Carlo, against the closed form
est = martin.martin_estimate(disc, idx, x0, x, z, 0.25, RngStream(3), tol=1e-2, n_samples=50_000,
                              method="mc")
print(f"M(x, z) Monte Carlo : {est.value:.4f} (error bound {est.error_bound:.4f})")
print(f"M(x, z) closed form : {kernels.martin_ball(idx, disc, x, z):.4f}")

# h-conditioned walks with h = M(., z) converge to z
h = conditioned.martin_pole(disc, idx, z)
paths = conditioned.simulate_conditioned_paths(disc, idx, x, h, 500, RngStream(4), record=True)
ends = np.array([p.points[-1] for p in paths])
print("median terminal distance to z:", np.median(np.linalg.norm(ends - z, axis=1)))
print("conditional lifetime E_x^z[tau]:", conditioned.conditional_lifetime(disc, idx, x, z, level=3))
