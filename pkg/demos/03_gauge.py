"""Gauge dichotomy for q = c on the unit disc at alpha = 1.

The gauge is finite exactly while c stays below the principal Dirichlet
eigenvalue, about 2.0061 for this disc.  Run with ``python demos/03_gauge.py``.
"""

import numpy as np

from stablepot import quad, schrodinger
from stablepot.geometry import Ball, StableIndex

idx = StableIndex(2, 1.0)
disc = Ball([0.0, 0.0], 1.0)
op = quad.green_operator(disc, idx, 4)
print("1 / top eigenvalue of G_D:", 1 / np.max(np.real(np.linalg.eigvals(op.weighted()))))

for c in [0.5, 1.0, 1.5, 1.95, 2.05]:
    sol = schrodinger.gauge(disc, idx, schrodinger.constant_potential(c), op)
    sup = "-" if sol.values is None else f"{sol.values.max():.3f}"
    print(f"c = {c:4.2f}: {sol.status:13s} rho = {sol.spectral_radius_estimate:.4f} sup g = {sup}")

# conditional gauge towards a boundary point
cg = schrodinger.conditional_gauge(disc, idx, schrodinger.constant_potential(1.0), op, [0.2, 0.1], [0.0, 1.0])
print("conditional gauge at x = (0.2, 0.1), z = (0, 1):", cg)
