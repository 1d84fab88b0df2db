"""Integral representations of harmonic functions.

A function harmonic in ``D`` with respect to ``X`` splits as
``f(x) = int_{D^c} K_D(x, z) f(z) dz + int_{dD} M_D(x, z) mu(dz)``; a
superharmonic one carries an extra Green potential ``int_D G_D(x, y) nu(dy)``.
The boundary and interior measures are recovered on meshes by damped
nonnegative least squares.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from . import kernels
from .errors import NotHarmonic, ValidationError
from .geometry import Ball, BoundaryMesh, Domain, StableIndex, as_points
from .quad import integrate_exterior_tail, integrate_interior
from .sampler import DEFAULT_SHRINK, McEstimate, harmonic_measure

log = logging.getLogger(__name__)

DAMPING = 1e-8
NEGATIVE_GATE = 3.0


@dataclass
class DiscreteBoundaryMeasure:
    """Nonnegative point masses ``weights[j]`` at ``mesh.nodes[j]``."""

    mesh: BoundaryMesh
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.mesh),):
            raise ValidationError("one weight per boundary node is required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValidationError("measure weights must be finite and nonnegative")

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @classmethod
    def surface(cls, mesh: BoundaryMesh) -> "DiscreteBoundaryMeasure":
        """Surface measure lumped onto the nodes."""
        return cls(mesh, mesh.patch_areas)


@dataclass
class Decomposition:
    """``f = exterior part + sum_j M_D(., z_j) mu_j + sum_k G_D(., y_k) nu_k``."""

    exterior_part: Callable
    martin_measure: DiscreteBoundaryMeasure
    interior_charge: np.ndarray | None
    interior_nodes: np.ndarray | None
    fit_residual: float
    singular_part: np.ndarray = field(repr=False, default=None)
    singular_std_error: np.ndarray = field(repr=False, default=None)
    martin_source: Callable = field(repr=False, default=None)
    green_source: Callable = field(repr=False, default=None)

    def reconstruct(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        zs = self.martin_measure.mesh.nodes
        out = np.asarray(self.exterior_part(pts), dtype=float).reshape(-1)
        out = out + self.martin_source(pts[:, None, :], zs[None, :, :]) @ self.martin_measure.weights
        if self.interior_charge is not None:
            out = out + self.green_source(pts[:, None, :], self.interior_nodes[None, :, :]) @ self.interior_charge
        return out


def harmonic_extension(domain: Domain, idx: StableIndex, f_ext, x, method: str = "ball_quadrature", *,
                       growth: float = 0.0, n_samples: int = 100_000, rng=0, shrink: float = DEFAULT_SHRINK,
                       level: int = 3, threads: int | None = None):
    """``E_x[f_ext(X_{tau_D})]`` from exterior data.

    ``growth`` declares ``|f_ext(z)| = O(|z|^growth)``.  ``"ball_quadrature"``
    integrates against the closed-form Poisson kernel and returns a float;
    ``"mc"`` uses walk-on-spheres and returns an :class:`McEstimate`.
    """
    x = np.asarray(x, dtype=float)
    a, n = idx.alpha, idx.n
    if method == "ball_quadrature":
        if not isinstance(domain, Ball):
            raise ValidationError("ball quadrature needs a Ball domain")
        if growth >= a:
            raise ValidationError(f"exterior data growing like |z|^{growth} has no harmonic extension")
        if not domain.contains(x):
            raise ValidationError("x must be interior")

        def g(z):
            return kernels.poisson_ball(idx, domain, x, z, strict=False) * np.asarray(f_ext(z), dtype=float)

        return integrate_exterior_tail(domain, g, n + a - growth, boundary_exponent=a / 2, level=level).value
    if method == "mc":
        if growth >= a / 2:
            raise ValidationError(
                f"exterior data growing like |z|^{growth} gives infinite variance for alpha = {a}"
            )
        return harmonic_measure(domain, idx, x, f_ext, n_samples, rng, shrink, threads=threads)
    raise ValidationError(f"unknown method {method!r}")


def poisson_from_green(domain: Domain, idx: StableIndex, x, z_ext, operator=None, *, level: int = 4) -> float:
    """``K_D(x, z) = A(n, alpha) int_D G_D(x, y) |y - z|^(-n - alpha) dy``.

    Balls integrate the closed-form Green function with a pole at ``x``;
    otherwise the row of ``operator`` at the node nearest ``x`` is used.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z_ext, dtype=float)
    n, a = idx.n, idx.alpha
    if domain.contains(z) or abs(float(domain.dist_to_boundary(z))) < 1e-6:
        raise ValidationError("z must lie strictly outside the closed domain (more than 1e-6 away)")
    A = kernels.constants(idx).levy_const
    if operator is None:
        if not isinstance(domain, Ball):
            raise ValidationError("a MeshGreenOperator is required off balls")

        def f(y):
            g = kernels.green_ball(idx, domain, x, y, strict=False)
            return g * np.linalg.norm(y - z, axis=1) ** (-n - a)

        return A * integrate_interior(domain, f, singular_at=x[None, :], singular_exponent=[n - a],
                                      level=level).value
    nodes, w = operator.mesh.nodes, operator.mesh.weights
    i = int(np.argmin(np.linalg.norm(nodes - x, axis=1)))
    return float(A * operator.matrix[i] @ (w * np.linalg.norm(nodes - z, axis=1) ** (-n - a)))


def probe_points(domain: Domain, mesh: BoundaryMesh, depths=(0.3, 0.6)) -> np.ndarray:
    """Interior shells at depth ``t * inradius``, staggered against ``mesh``.

    Each shell holds one probe per boundary node.  On balls in the plane the
    second shell is rotated by half a node spacing.
    """
    c = domain.center
    pts = []
    for k, t in enumerate(depths):
        z = mesh.nodes
        if isinstance(domain, Ball) and domain.n == 2:
            m = len(z)
            th = 2 * np.pi * (np.arange(m) + 0.5 * (k + 1)) / m
            z = c + domain.radius * np.column_stack([np.cos(th), np.sin(th)])
        u = c - z
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts.append(z + t * domain.inradius * u)
    return np.vstack(pts)


def interior_charge_nodes(domain: Domain, count: int) -> np.ndarray:
    """Roughly uniform interior nodes for Green charges (sunflower layout on discs)."""
    if domain.n == 2:
        k = np.arange(count) + 0.5
        r = np.sqrt(k / count) * 0.85 * domain.inradius
        th = np.pi * (3 - math.sqrt(5)) * k
        return domain.center + np.column_stack([r * np.cos(th), r * np.sin(th)])
    gen = np.random.default_rng(0)
    pts = []
    while len(pts) < count:
        p = domain.center + domain.inradius * (2 * gen.random(domain.n) - 1)
        if domain.dist_to_boundary(p) > 0.15 * domain.inradius:
            pts.append(p)
    return np.array(pts)


def _sources(domain, idx, martin_source, green_source):
    if isinstance(domain, Ball):
        M = martin_source or (lambda x, z: kernels.martin_ball(idx, domain, x, z, strict=False))
        G = green_source or (lambda x, y: kernels.green_ball(idx, domain, x, y, strict=False))
        return M, G
    if martin_source is None:
        raise ValidationError("a martin_source is required off balls")
    return martin_source, green_source


def damped_nnls(A, b, damping: float = DAMPING):
    """``min ||A x - b||^2 + lambda ||x||^2`` over ``x >= 0``, ``lambda = damping * sigma_max^2``."""
    smax = np.linalg.norm(A, 2)
    lam = damping * smax**2
    Aa = np.vstack([A, math.sqrt(lam) * np.eye(A.shape[1])])
    ba = np.concatenate([b, np.zeros(A.shape[1])])
    x, _ = optimize.nnls(Aa, ba, maxiter=50 * A.shape[1])
    return x


def decompose(domain: Domain, idx: StableIndex, f, probes, mesh: BoundaryMesh, *,
              allow_interior_charge: bool = False, interior_nodes=None, growth: float = 0.0,
              method: str = "ball_quadrature", n_samples: int = 100_000, rng=0,
              martin_source=None, green_source=None) -> Decomposition:
    """Split ``f`` into its exterior Poisson part and Martin (and Green) measures.

    ``f`` maps points of ``R^n`` to values.  The singular part
    ``s(x_i) = f(x_i) - E_{x_i}[f(X_tau)]`` must be nonnegative up to three
    standard errors (quadrature error estimates when deterministic).
    """
    probes = as_points(probes, domain.n)
    if len(probes) < 2 * len(mesh):
        raise ValidationError("decompose needs at least twice as many probes as boundary nodes")
    if not np.all(domain.contains(probes)):
        raise ValidationError("probe points must be interior")
    M, G = _sources(domain, idx, martin_source, green_source)
    f_ext = lambda z: np.asarray(f(z), dtype=float)
    ext = []
    se = []
    for i, x in enumerate(probes):
        v = harmonic_extension(domain, idx, f_ext, x, method, growth=growth, n_samples=n_samples,
                               rng=rng if not isinstance(rng, int) else rng + i)
        if isinstance(v, McEstimate):
            ext.append(v.value)
            se.append(v.std_error)
        else:
            ext.append(v)
            se.append(0.0)
    ext = np.array(ext)
    se = np.array(se)
    fx = np.asarray(f(probes), dtype=float)
    s = fx - ext
    scale = max(float(np.max(np.abs(fx))), 1e-300)
    tol = NEGATIVE_GATE * se + 1e-7 * scale
    if np.any(s < -tol):
        i = int(np.argmin(s + tol))
        raise NotHarmonic(
            f"negative singular part {s[i]:.3g} at {probes[i].tolist()}: f is not harmonic in D",
            worst={"point": probes[i].tolist(), "singular_part": float(s[i]), "std_error": float(se[i])},
        )
    zs = mesh.nodes
    cols = [np.asarray(M(probes[:, None, :], zs[None, :, :]), dtype=float)]
    ynodes = None
    if allow_interior_charge:
        if G is None:
            raise ValidationError("a green_source is required for interior charges off balls")
        ynodes = interior_charge_nodes(domain, len(zs)) if interior_nodes is None else as_points(
            interior_nodes, domain.n)
        cols.append(np.asarray(G(probes[:, None, :], ynodes[None, :, :]), dtype=float))
    A = np.hstack(cols)
    if A.shape[1] > A.shape[0] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise ValidationError("design matrix is rank deficient: mesh too fine for the probe count")
    coef = damped_nnls(A, s)
    resid = float(np.max(np.abs(A @ coef - s)))
    mu = DiscreteBoundaryMeasure(mesh, coef[: len(zs)])
    nu = coef[len(zs):] if allow_interior_charge else None

    def exterior_part(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.array([harmonic_extension(domain, idx, f_ext, p, "ball_quadrature", growth=growth)
                         if domain.contains(p) else float(f_ext(p[None, :])[0]) for p in pts])

    return Decomposition(exterior_part, mu, nu, ynodes, resid, s, se, M, G)


def exterior_identifiability(domain: Domain, idx: StableIndex, data_nodes, data_weights, probes,
                             poisson_source=None) -> float:
    """Smallest singular value of ``K_D(x_i, z_j) w_j`` (probes by exterior data nodes).

    A strictly positive value certifies that exterior data on these nodes
    are determined by their interior extensions at mesh level.  Duplicate
    data nodes give a repeated column, reported as exactly zero.
    """
    data_nodes = as_points(data_nodes, domain.n)
    probes = as_points(probes, domain.n)
    w = np.asarray(data_weights, dtype=float)
    if len(probes) < len(data_nodes):
        raise ValidationError("identifiability needs at least as many probes as data nodes")
    if np.any(domain.contains(data_nodes)) or np.any(np.abs(domain.dist_to_boundary(data_nodes)) < 1e-9):
        raise ValidationError("data nodes must lie strictly outside the domain")
    if len(np.unique(data_nodes, axis=0)) < len(data_nodes):
        log.warning("duplicate exterior data nodes: the data map is not injective")
        return 0.0
    if poisson_source is None:
        if not isinstance(domain, Ball):
            raise ValidationError("a poisson_source is required off balls")
        poisson_source = lambda x, z: kernels.poisson_ball(idx, domain, x, z, strict=False)
    K = np.asarray(poisson_source(probes[:, None, :], data_nodes[None, :, :]), dtype=float) * w[None, :]
    return float(np.linalg.svd(K, compute_uv=False)[-1])
