"""Quadrature on convex domains and their exteriors, and the discretised Green operator.

Interior integrals are computed along rays cast from a pole: for a convex
domain every point is reached exactly once by a ray from any point of the
closure.  Radial integrals use tanh-sinh quadrature, which tolerates the
algebraic endpoint behaviour of the kernels here (``|y - p|^(-s)`` at the pole,
``delta(y)^(alpha/2)`` at the boundary).  Several poles are handled with a
smooth partition of unity ``chi_i = d_i^-k / sum_l d_l^-k``.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import QuadratureError, ValidationError
from .geometry import Ball, Box, Domain, Polytope, StableIndex, as_points, unit_sphere_area

log = logging.getLogger(__name__)

_PARTITION_POWER = 6
_MAX_SPHERE_LEVEL = 3
_MIN_GAP = 1e-9
CACHE_ENV = "STABLEPOT_CACHE"
CACHE_VERSION = 1


# --------------------------------------------------------------------------
# one-dimensional rules
# --------------------------------------------------------------------------


def tanh_sinh(level: int, tmax: float = 3.2):
    """Tanh-sinh nodes on (0, 1).

    Returns ``(x, 1 - x, w)``; the complement is computed directly so nodes
    next to the right endpoint keep their relative accuracy.
    """
    h = 2.0**-level
    k = np.arange(-int(tmax / h), int(tmax / h) + 1)
    t = k * h
    u = 0.5 * np.pi * np.sinh(t)
    x = 1.0 / (1.0 + np.exp(-2 * u))
    xc = 1.0 / (1.0 + np.exp(2 * u))
    w = h * np.pi * np.cosh(t) * x * xc
    return x, xc, w


def graded_rule(a: float, b: float, panels: int, order: int = 4, grade_left=True, grade_right=True,
                layers: int = 3):
    """Composite Gauss-Legendre rule with geometric refinement next to the ends.

    The end panels are split into ``layers + 1`` pieces with ratio 1/2.
    """
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = list(np.linspace(a, b, panels + 1))
    H = (b - a) / panels
    if grade_right:
        right = [b - H * 0.5**j for j in range(1, layers + 1)]
        edges = edges[:-1] + right + [b]
    if grade_left:
        left = [a + H * 0.5**j for j in range(layers, 0, -1)]
        edges = [a] + left + edges[1:]
    edges = np.array(sorted(set(edges)))
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = (mid[:, None] + half[:, None] * gx[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    return x, w


# --------------------------------------------------------------------------
# angular rules
# --------------------------------------------------------------------------


def _circle_arcs(domain: Domain, p: np.ndarray):
    """Breakpoint-free arcs (in angle) covering the directions with positive ray length."""
    if isinstance(domain, Ball):
        if domain.dist_to_boundary(p) > 1e-12 * domain.radius:
            return None
        u = domain.inward_direction(p)
        phi = math.atan2(u[1], u[0])
        return [(phi - 0.5 * np.pi, phi + 0.5 * np.pi)]
    v = domain.vertices() - p
    keep = np.linalg.norm(v, axis=1) > 1e-12 * domain.diameter
    ang = np.sort(np.arctan2(v[keep, 1], v[keep, 0]))
    ang = np.concatenate([ang, [ang[0] + 2 * np.pi]])
    arcs = []
    for lo, hi in zip(ang[:-1], ang[1:]):
        if hi - lo < 1e-14:
            continue
        mid = 0.5 * (lo + hi)
        if domain.ray_exit(p, [[math.cos(mid), math.sin(mid)]])[0] > 0:
            arcs.append((lo, hi))
    return arcs


def angular_rule(domain: Domain, p, level: int):
    """Directions and weights on the unit sphere adapted to ``domain`` seen from ``p``."""
    n = domain.n
    p = np.asarray(p, dtype=float)
    if n == 1:
        return np.array([[-1.0], [1.0]]), np.ones(2)
    if n == 2:
        arcs = _circle_arcs(domain, p)
        if arcs is None:
            m = 8 * 2**level
            th = 2 * np.pi * (np.arange(m) + 0.5) / m
            return np.column_stack([np.cos(th), np.sin(th)]), np.full(m, 2 * np.pi / m)
        x, _, w = tanh_sinh(level)
        th = np.concatenate([lo + (hi - lo) * x for lo, hi in arcs])
        wt = np.concatenate([(hi - lo) * w for lo, hi in arcs])
        return np.column_stack([np.cos(th), np.sin(th)]), wt
    if n == 3:
        # angular rules converge spectrally; capping keeps point counts bounded
        level = min(level, _MAX_SPHERE_LEVEL)
        m = 4 * 2**level
        phi = 2 * np.pi * (np.arange(2 * m) + 0.5) / (2 * m)
        on_bdry = abs(domain.dist_to_boundary(p)) <= 1e-12 * domain.diameter
        if on_bdry:
            axis = domain.inward_direction(p)
            x, _, w = tanh_sinh(level)
            theta = 0.5 * np.pi * x
            ct, st, wt = np.cos(theta), np.sin(theta), 0.5 * np.pi * w * np.sin(theta)
        else:
            axis = np.array([0.0, 0.0, 1.0])
            ct, wt = np.polynomial.legendre.leggauss(m)
            st = np.sqrt(1 - ct**2)
        e1 = np.cross(axis, [1.0, 0, 0] if abs(axis[0]) < 0.9 else [0, 1.0, 0])
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        dirs = (ct[:, None, None] * axis
                + st[:, None, None] * (np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2))
        weights = wt[:, None] * np.full(2 * m, 2 * np.pi / (2 * m))[None, :]
        return dirs.reshape(-1, 3), weights.ravel()
    raise ValidationError("deterministic quadrature is available for n <= 3")


def sphere_rule(n: int, level: int = 3):
    """Directions and weights on the full unit sphere S^(n-1)."""
    return angular_rule(Ball(np.zeros(n), 1.0), np.zeros(n), level)


# --------------------------------------------------------------------------
# interior and exterior integration
# --------------------------------------------------------------------------


@dataclass
class QuadResult:
    value: float
    error: float
    evaluations: int
    converged: bool = True
    iterates: list = field(default_factory=list)
    tail: float = 0.0
    tail_bound: float = 0.0


def _partition(points, poles, k=_PARTITION_POWER):
    d = np.linalg.norm(points[:, None, :] - poles[None, :, :], axis=-1)
    # (d_min / d)^k lies in [0, 1], so tiny distances cannot overflow
    dmin = d.min(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d > 0, dmin / d, 1.0) ** k
    return ratio / ratio.sum(axis=1, keepdims=True)


def interior_rule(domain: Domain, poles=None, exponents=None, level: int = 3):
    """Points and weights for ``int_D f`` with singularities at ``poles``.

    ``exponents[i] = s`` declares ``|f| ~ |y - pole_i|^-s`` (``s < n``); the
    radial substitution ``r = R u^(1/(n - s))`` then makes the radial
    integrand bounded.  Nodes with ``r < 1e-9 R`` are evaluated at that
    radius.
    """
    n = domain.n
    if poles is None or len(np.atleast_1d(poles)) == 0:
        poles = domain.center[None, :]
        exponents = [0.0]
    poles = as_points(poles, n)
    if exponents is None:
        exponents = [0.0] * len(poles)
    exponents = np.broadcast_to(np.asarray(exponents, dtype=float), (len(poles),))
    if np.any(exponents >= n):
        raise ValidationError("singularity exponent must be below the dimension")
    for p in poles:
        if domain.dist_to_boundary(p) < -1e-9 * domain.diameter:
            raise ValidationError("integration poles must lie in the closed domain")
    u, _, v = tanh_sinh(level)
    pts_all, w_all = [], []
    for p, s in zip(poles, exponents):
        dirs, dw = angular_rule(domain, p, level)
        R = domain.ray_exit(p, dirs)
        keep = R > 0
        dirs, dw, R = dirs[keep], dw[keep], R[keep]
        gamma = 1.0 / (n - s)
        # clamp in u: the substituted radial integrand is close to constant at the pole
        uc = np.maximum(u, _MIN_GAP ** (1.0 / gamma))
        r = R[:, None] * (uc**gamma)[None, :]
        pts = p[None, None, :] + r[:, :, None] * dirs[:, None, :]
        w = dw[:, None] * R[:, None] ** n * (gamma * uc ** (gamma * n - 1) * v)[None, :]
        pts_all.append(pts.reshape(-1, n))
        w_all.append(w.ravel())
    pts = np.vstack(pts_all)
    w = np.concatenate(w_all)
    if len(poles) > 1:
        counts = [len(x) for x in w_all]
        chi = _partition(pts, poles)
        owner = np.repeat(np.arange(len(poles)), counts)
        w = w * chi[np.arange(len(pts)), owner]
    return pts, w


def _refine(rule, f, level, max_level, rtol, atol, strict, what):
    iterates = []
    evaluations = 0
    value = None
    for lev in range(level, max_level + 1):
        pts, w = rule(lev)
        vals = np.asarray(f(pts), dtype=float)
        evaluations += len(pts)
        value = float(np.dot(w, vals))
        iterates.append(value)
        if len(iterates) >= 2:
            err = abs(iterates[-1] - iterates[-2])
            if err <= max(atol, rtol * abs(value)):
                return QuadResult(value, err, evaluations, True, iterates)
    err = abs(iterates[-1] - iterates[-2]) if len(iterates) > 1 else math.inf
    if strict:
        raise QuadratureError(f"{what} did not converge: last iterates {iterates[-2:]}", iterates[-2:])
    log.warning("%s not converged (last iterates %s)", what, iterates[-2:])
    return QuadResult(value, err, evaluations, False, iterates)


def integrate_interior(domain: Domain, f, singular_at=None, singular_exponent=None, *, level: int = 3,
                       max_level: int = 6, rtol: float = 1e-7, atol: float = 1e-14,
                       strict: bool = False) -> QuadResult:
    """``int_D f(y) dy`` with optional point singularities.

    ``f`` maps an ``(m, n)`` array of points to ``m`` values.  The error
    estimate is the difference of the last two refinement levels.
    """
    poles = None if singular_at is None else as_points(singular_at, domain.n)
    return _refine(
        lambda lev: interior_rule(domain, poles, singular_exponent, lev),
        f, level, max_level, rtol, atol, strict, "interior quadrature",
    )


def exterior_rule(domain: Domain, decay: float, level: int = 3, boundary_exponent: float = 0.0,
                  truncation: float | None = None):
    """Points and weights for ``int_{D^c} f`` when ``|f(z)| ~ |z|^-decay`` at infinity.

    Rays leave the Chebyshev centre; a ray of exit radius ``R`` is split at
    ``2 R`` and at the truncation radius ``T`` (default ``10 diam(D)``).
    Next to the boundary, ``rho = R (1 + v^p)`` with ``p = 1 / (1 - b)``
    makes an integrand behaving like ``dist^-b`` bounded in ``v``; nodes
    closer than ``1e-9 R`` are evaluated at that gap.  The middle piece is
    integrated in ``log rho`` and the tail by ``rho = T u^(-1/kappa)`` with
    ``kappa = decay - n``.  Returns points, weights, radii and a mask of the
    tail nodes.
    """
    n = domain.n
    kappa = decay - n
    if kappa <= 0:
        raise ValidationError("exterior integrand must decay faster than |z|^-n")
    b = float(boundary_exponent)
    if not 0.0 <= b < 1.0:
        raise ValidationError("boundary exponent must lie in [0, 1)")
    T = 10 * domain.diameter if truncation is None else float(truncation)
    c = domain.center
    dirs, dw = angular_rule(domain, c, level)
    R = domain.ray_exit(c, dirs)[:, None]
    dw = dw[:, None]
    x, _, wx = tanh_sinh(level)
    p = 1.0 / (1.0 - b)
    # clamp in v, where the integrand is close to constant near the boundary
    xv = np.maximum(x, _MIN_GAP ** (1.0 / p))
    mid_lo = 2 * R
    if np.any(mid_lo >= T):
        raise ValidationError("truncation radius must exceed twice the domain extent")
    near_rho = R * (1.0 + xv**p)
    near_w = dw * near_rho ** (n - 1) * R * p * xv ** (p - 1) * wx
    span = np.log(T / mid_lo)
    mid_rho = mid_lo * np.exp(span * x)
    mid_w = dw * mid_rho**n * span * wx
    tail_rho = T * x ** (-1.0 / kappa) * np.ones_like(R)
    tail_w = dw * tail_rho ** (n - 1) * (T / kappa) * x ** (-1.0 / kappa - 1) * wx
    rho = np.hstack([near_rho, mid_rho, tail_rho])
    w = np.hstack([near_w, mid_w, tail_w])
    tail = np.zeros(rho.shape, dtype=bool)
    tail[:, 2 * len(x):] = True
    pts = c + rho[:, :, None] * dirs[:, None, :]
    ok = np.isfinite(rho) & np.isfinite(w) & (w > 0)
    return pts[ok], w[ok], rho[ok], tail[ok]


def integrate_exterior_tail(domain: Domain, f, decay: float, truncation: float | None = None, *,
                            boundary_exponent: float = 0.0, level: int = 3, max_level: int = 6,
                            rtol: float = 1e-7, atol: float = 1e-14, strict: bool = False) -> QuadResult:
    """``int_{D^c} f(z) dz`` for integrands with declared power decay.

    ``boundary_exponent`` declares blow-up like ``dist(z, D)^-b`` at the
    boundary.  The returned ``tail`` is the part beyond the truncation
    radius ``T`` (default ``10 diam(D)``), computed by the same rule, and
    ``tail_bound`` the analytic remainder ``|S^(n-1)| C T^-kappa / kappa``
    with ``C`` the largest observed ``|f(z)| |z - c|^decay`` beyond ``T``.
    """
    n = domain.n
    T = 10 * domain.diameter if truncation is None else float(truncation)
    res = _refine(
        lambda lev: exterior_rule(domain, decay, lev, boundary_exponent, T)[:2],
        f, level, max_level, rtol, atol, strict, "exterior quadrature",
    )
    pts, w, rho, far = exterior_rule(domain, decay, level + len(res.iterates) - 1, boundary_exponent, T)
    vals = np.asarray(f(pts), dtype=float)
    res.tail = float(np.dot(w[far], vals[far]))
    C = float(np.max(np.abs(vals[far]) * rho[far] ** decay))
    res.tail_bound = unit_sphere_area(n) * C * T ** (n - decay) / (decay - n)
    return res


# --------------------------------------------------------------------------
# interior meshes and the discretised Green operator
# --------------------------------------------------------------------------


@dataclass
class InteriorMesh:
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def _sphere_product(m: int):
    """Gauss-Legendre in ``cos(theta)`` times the trapezoid rule in ``phi`` (``2 m^2`` nodes)."""
    ct, wt = np.polynomial.legendre.leggauss(m)
    st = np.sqrt(1 - ct**2)
    phi = np.pi * (np.arange(2 * m) + 0.5) / m
    dirs = np.stack([
        (st[:, None] * np.cos(phi)[None, :]).ravel(),
        (st[:, None] * np.sin(phi)[None, :]).ravel(),
        np.repeat(ct, 2 * m),
    ], axis=1)
    return dirs, np.repeat(wt, 2 * m) * (np.pi / m)


def _polytope_mesh(domain: Polytope, resolution: int, order: int) -> InteriorMesh:
    # fan of pyramids from the Chebyshev centre over a triangulated boundary,
    # each mapped from collapsed coordinates and graded towards its facet
    from scipy.spatial import ConvexHull

    n = domain.n
    c = domain.center
    v = domain.vertices()
    hull = ConvexHull(v)
    s, ws = graded_rule(0.0, 1.0, resolution, order, grade_left=False)
    nodes, weights = [], []
    for simplex in hull.simplices:
        V = v[simplex]
        vol = abs(np.linalg.det(V - c))
        if vol <= 1e-14 * domain.diameter**n:
            continue
        size = max(np.linalg.norm(V[i] - V[j]) for i in range(n) for j in range(i))
        panels = max(1, int(math.ceil(resolution * size / domain.diameter)))
        a, wa = graded_rule(0.0, 1.0, panels, order, grade_left=False, grade_right=False)
        if n == 2:
            facet = (1 - a)[:, None] * V[0] + a[:, None] * V[1]
            fw = wa
        else:
            bb, wb = a, wa
            A, Bq = np.meshgrid(a, bb, indexing="ij")
            WA, WB = np.meshgrid(wa, wb, indexing="ij")
            A, Bq, WA, WB = A.ravel(), Bq.ravel(), WA.ravel(), WB.ravel()
            facet = ((1 - A)[:, None] * V[0]
                     + (A * (1 - Bq))[:, None] * V[1] + (A * Bq)[:, None] * V[2])
            fw = WA * WB * A
        pts = c + s[:, None, None] * (facet - c)[None, :, :]
        w = (ws * s ** (n - 1))[:, None] * fw[None, :] * vol
        nodes.append(pts.reshape(-1, n))
        weights.append(w.ravel())
    return InteriorMesh(np.vstack(nodes), np.concatenate(weights))


def interior_mesh(domain: Domain, resolution: int, order: int = 4) -> InteriorMesh:
    """Quadrature mesh with positive weights and boundary-layer grading.

    ``resolution`` is the number of base panels per radius (ball), per axis
    (box), or per centre-to-facet segment (polytope).  Every rule is graded
    towards the boundary with three geometric layers of ratio 1/2.
    """
    if resolution < 3:
        raise ValidationError("mesh resolution must be at least 3")
    n = domain.n
    if n == 1:
        lo, hi = domain.center[0] - domain.inradius, domain.center[0] + domain.inradius
        x, w = graded_rule(lo, hi, 2 * resolution, order)
        return InteriorMesh(x[:, None], w)
    if n > 3:
        raise ValidationError("interior meshes are available for n <= 3")
    if isinstance(domain, Ball):
        c, R = domain.center, domain.radius
        r, wr = graded_rule(0.0, R, resolution, order, grade_left=False)
        spacing = R / (resolution * order)
        nodes, weights = [], []
        for k, (rk, wk) in enumerate(zip(r, wr)):
            if n == 2:
                m = max(8, int(math.ceil(2 * math.pi * rk / spacing)))
                th = 2 * np.pi * (np.arange(m) + 0.5 * (k % 2)) / m
                dirs = np.column_stack([np.cos(th), np.sin(th)])
                dw = np.full(m, 2 * np.pi / m)
            else:
                dirs, dw = _sphere_product(max(2, int(math.ceil(0.5 * math.pi * rk / spacing))))
            nodes.append(c + rk * dirs)
            weights.append(wk * rk ** (n - 1) * dw)
        return InteriorMesh(np.vstack(nodes), np.concatenate(weights))
    if isinstance(domain, Box):
        axes = [graded_rule(lo, hi, resolution, order) for lo, hi in zip(domain.lo, domain.hi)]
        grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        wgrid = np.meshgrid(*[a[1] for a in axes], indexing="ij")
        nodes = np.column_stack([g.ravel() for g in grids])
        weights = np.prod([g.ravel() for g in wgrid], axis=0)
        return InteriorMesh(nodes, weights)
    if isinstance(domain, Polytope):
        return _polytope_mesh(domain, resolution, order)
    raise ValidationError(f"no interior mesh for {type(domain).__name__}")


@dataclass
class MeshGreenOperator:
    """Nystrom discretisation of ``G_D`` with singularity subtraction.

    ``matrix[i, j] = G_D(x_i, x_j)`` off the diagonal.  The diagonal holds
    the cell value that makes every row reproduce the mean exit time:
    ``sum_j matrix[i, j] w_j = exit_times[i]``.  Applying the operator to
    nodal values ``f`` therefore computes
    ``sum_j G(x_i, x_j) w_j (f_j - f_i) + f_i E_{x_i}[tau_D]``.
    """

    mesh: InteriorMesh
    matrix: np.ndarray
    exit_times: np.ndarray
    std_errors: np.ndarray | None = None
    flagged: np.ndarray | None = None

    def apply(self, f) -> np.ndarray:
        return self.matrix @ (self.mesh.weights * np.asarray(f, dtype=float))

    def weighted(self) -> np.ndarray:
        """Matrix of the linear map ``f -> G f`` on nodal values."""
        return self.matrix * self.mesh.weights[None, :]

    def symmetry_defect(self) -> float:
        K = self.matrix.copy()
        np.fill_diagonal(K, 0.0)
        return float(np.max(np.abs(K - K.T)) / np.max(np.abs(K)))

    def save(self, path):
        np.savez_compressed(
            path, version=CACHE_VERSION, nodes=self.mesh.nodes, weights=self.mesh.weights,
            matrix=self.matrix, exit_times=self.exit_times,
            std_errors=np.array([]) if self.std_errors is None else self.std_errors,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            if int(z["version"]) != CACHE_VERSION:
                raise ValidationError(f"cache file {path} has incompatible version")
            se = z["std_errors"]
            return cls(InteriorMesh(z["nodes"], z["weights"]), z["matrix"], z["exit_times"],
                       se if se.size else None)


def _cache_path(domain, idx, resolution, extra=""):
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    name = f"green_{domain.key()}_{idx.n}_{idx.alpha!r}_{resolution}{extra}.npz"
    return Path(root) / name


def green_operator(domain: Domain, idx: StableIndex, resolution: int, *, n_samples: int = 4000,
                   seed: int = 0, use_cache: bool = True) -> MeshGreenOperator:
    """Discretised Green operator on :func:`interior_mesh`.

    Balls use the closed-form kernel; boxes and polytopes use Monte Carlo
    ``G_D = G - E[G(X_tau, .)]`` with one stream per row, and entries whose
    standard error exceeds 10 % of their magnitude are flagged.
    """
    from . import kernels

    if isinstance(domain, Box) and domain.n == 1:
        domain = Ball(domain.center, domain.inradius)
    extra = "" if isinstance(domain, Ball) else f"_mc{n_samples}_{seed}"
    path = _cache_path(domain, idx, resolution, extra) if use_cache else None
    if path is not None and path.exists():
        return MeshGreenOperator.load(path)
    mesh = interior_mesh(domain, resolution)
    x = mesh.nodes
    if isinstance(domain, Ball):
        K = kernels.green_ball(idx, domain, x[:, None, :], x[None, :, :], strict=False)
        np.fill_diagonal(K, 0.0)
        e = kernels.mean_exit_time_ball(idx, domain, x)
        op = _with_subtracted_diagonal(mesh, K, e)
    else:
        from .martin import green_mc_rows

        K, se, e = green_mc_rows(domain, idx, x, n_samples=n_samples, seed=seed)
        np.fill_diagonal(K, 0.0)
        op = _with_subtracted_diagonal(mesh, K, e)
        op.std_errors = se
        with np.errstate(divide="ignore", invalid="ignore"):
            op.flagged = se > 0.1 * np.abs(K)
        np.fill_diagonal(op.flagged, False)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        op.save(path)
    return op


def _with_subtracted_diagonal(mesh, K, e):
    off = K @ mesh.weights
    diag = (e - off) / mesh.weights
    M = K.copy()
    M[np.diag_indices_from(M)] = diag
    return MeshGreenOperator(mesh, M, np.asarray(e, dtype=float))
