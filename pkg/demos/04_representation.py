"""Recovering the Martin measure of a synthetic harmonic function.

f = 2 M(., z1) + 1 M(., z2) on the disc; the damped NNLS fit should put
its mass on the two boundary nodes.  Run with ``python demos/04_representation.py``.
"""

import numpy as np

from stablepot import kernels, representation
from stablepot.geometry import Ball, StableIndex

idx = StableIndex(2, 1.0)
disc = Ball([0.0, 0.0], 1.0)
mesh = disc.boundary_mesh(16)
z1, z2 = mesh.nodes[0], mesh.nodes[5]
f = lambda p: 2 * kernels.martin_ball(idx, disc, p, z1, strict=False) + kernels.martin_ball(idx, disc, p, z2, strict=False)

probes = representation.probe_points(disc, mesh)
dec = representation.decompose(disc, idx, f, probes, mesh)
w = dec.martin_measure.weights
print("recovered mass:", w.sum(), "(expected 3)")
print("largest weights at nodes:", np.argsort(w)[::-1][:2], "(expected 0 and 5)")
print("fit residual:", dec.fit_residual)
