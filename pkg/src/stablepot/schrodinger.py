"""Schrodinger perturbations: Kato moduli, gauge functions, V_q, conditional gauges.

Everything is discretised on a :class:`~stablepot.quad.MeshGreenOperator`.
With ``A = G_D diag(w q)`` the gauge solves ``g = 1 + A g`` and the
perturbed Green matrix is ``V_q = (I - A)^-1 G_D``.  Off-mesh values use
Nystrom interpolation ``V_q(x, y) = G_D(x, y) + sum_j G_D(x, y_j) w_j q_j V_q(y_j, y)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import NonContraction, NotGaugeable, ValidationError
from .geometry import Ball, Domain, StableIndex, as_points, unit_sphere_area
from .martin import _extrapolate
from .quad import MeshGreenOperator, integrate_interior

log = logging.getLogger(__name__)

GAUGE_MARGIN = 0.95
POWER_ITERATIONS = 50
DIVERGENCE_RUN = 5
DIVERGENCE_BURN_IN = 20
SERIES_TERM_CAP = 100_000


@dataclass(frozen=True)
class Potential:
    """Potential ``q`` with optional sup bound and point singularities ``|y - p|^-beta``."""

    evaluator: Callable
    declared_bound: float | None = None
    singularities: tuple = ()
    constant_value: float | None = None

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.asarray(self.evaluator(pts), dtype=float).reshape(len(pts))

    def check(self, idx: StableIndex) -> None:
        for p, beta in self.singularities:
            if len(p) != idx.n:
                raise ValidationError("singularity point has the wrong dimension")
            if beta >= idx.alpha:
                raise ValidationError(
                    f"singularity exponent {beta} >= alpha = {idx.alpha}: q is not in the Kato class"
                )

    @property
    def is_zero(self) -> bool:
        return self.constant_value == 0.0


def constant_potential(c: float) -> Potential:
    c = float(c)
    return Potential(lambda p: np.full(len(p), c), abs(c), (), c)


def radial_power(c: float, center, beta: float) -> Potential:
    """``q(y) = c |y - center|^-beta``."""
    center = np.asarray(center, dtype=float)
    if beta <= 0:
        raise ValidationError("radial power needs beta > 0")

    def ev(p):
        with np.errstate(divide="ignore"):
            return c * np.linalg.norm(p - center, axis=1) ** (-beta)

    return Potential(ev, None, ((tuple(center.tolist()), float(beta)),))


def tabulated_potential(nodes, values) -> Potential:
    """Potential known on mesh nodes; evaluation elsewhere uses the nearest node."""
    from scipy.spatial import cKDTree

    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    values = np.asarray(values, dtype=float)
    tree = cKDTree(nodes)
    return Potential(lambda p: values[tree.query(p)[1]], float(np.max(np.abs(values))))


def kato_modulus(idx: StableIndex, q: Potential, r: float, probes, *, level: int = 4) -> float:
    """``max_x int_{|x - y| <= r} |q(y)| |x - y|^(alpha - n) dy`` over probe points ``x``."""
    if r <= 0:
        raise ValidationError("radius must be positive")
    q.check(idx)
    if q.is_zero:
        return 0.0
    n, a = idx.n, idx.alpha
    best = 0.0
    for x in as_points(probes, n):
        poles, exps = [x], [n - a]
        for p, beta in q.singularities:
            p = np.asarray(p, dtype=float)
            if np.linalg.norm(p - x) <= 1e-12 * r:
                exps[0] += beta
            elif np.linalg.norm(p - x) < r:
                poles.append(p)
                exps.append(beta)
        if exps[0] >= n:
            raise ValidationError("local Kato integral diverges at a declared singularity")

        def f(y):
            d = np.linalg.norm(y - x, axis=1)
            return np.abs(q(y)) * d ** (a - n)

        res = integrate_interior(Ball(x, r), f, singular_at=np.array(poles), singular_exponent=exps,
                                 level=level)
        best = max(best, res.value)
    return best


def kato_modulus_constant(idx: StableIndex, bound: float, r: float) -> float:
    """Closed form ``M omega_(n-1) r^alpha / alpha`` for ``|q| <= M``."""
    return bound * unit_sphere_area(idx.n) * r**idx.alpha / idx.alpha


@dataclass
class GaugeSolution:
    """Gauge values on the mesh.

    ``status`` is ``"gaugeable"``, ``"marginal"`` (spectral radius estimate
    in ``(0.95, 1)``, values from a direct solve, ``gaugeable`` false) or
    ``"not_gaugeable"`` (no values reported).
    """

    values: np.ndarray | None
    series_terms_used: int
    spectral_radius_estimate: float
    gaugeable: bool
    status: str
    residual: float = 0.0
    nodes: np.ndarray | None = field(default=None, repr=False)


def _q_nodes(q: Potential, op: MeshGreenOperator) -> np.ndarray:
    v = q(op.mesh.nodes)
    if not np.all(np.isfinite(v)):
        raise ValidationError("potential is not finite at every mesh node")
    return v


def spectral_radius(op: MeshGreenOperator, qv) -> float:
    """Power-method estimate for ``G_D |q|``: 50 iterations from the all-ones vector."""
    A = op.weighted() * np.abs(qv)[None, :]
    v = np.ones(len(qv))
    rho = 0.0
    for _ in range(POWER_ITERATIONS):
        u = A @ v
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        rho = nu / np.linalg.norm(v)
        v = u / nu
    return float(rho)


def gauge(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator,
          tol: float = 1e-10) -> GaugeSolution:
    """Gauge ``g = E_x[exp int_0^tau q(X_s) ds]`` as the Neumann series ``sum_k (G_D q)^k 1``.

    For ``q <= 0`` the gauge is bounded by 1 whatever the spectral radius,
    and ``(I - G_D q) g = 1`` is solved directly when the series would not
    converge.
    """
    q.check(idx)
    nodes = operator.mesh.nodes
    if q.is_zero:
        return GaugeSolution(np.ones(len(nodes)), 1, 0.0, True, "gaugeable", 0.0, nodes)
    qv = _q_nodes(q, operator)
    rho = spectral_radius(operator, qv)
    A = operator.weighted() * qv[None, :]
    if np.all(qv <= 0) and rho >= GAUGE_MARGIN:
        g = np.linalg.solve(np.eye(len(qv)) - A, np.ones(len(qv)))
        res = float(np.max(np.abs(g - 1 - A @ g)))
        return GaugeSolution(g, 0, rho, True, "gaugeable", res, nodes)
    if rho >= 1.0:
        return GaugeSolution(None, 0, rho, False, "not_gaugeable", np.inf, nodes)
    if rho > GAUGE_MARGIN:
        # the series would need ~ log(tol) / log(rho) terms; its limit solves (I - A) g = 1
        g = np.linalg.solve(np.eye(len(qv)) - A, np.ones(len(qv)))
        if np.any(g <= 0) or not np.all(np.isfinite(g)):
            return GaugeSolution(None, 0, rho, False, "not_gaugeable", np.inf, nodes)
        res = float(np.max(np.abs(g - 1 - A @ g)))
        return GaugeSolution(g, 0, rho, False, "marginal", res, nodes)
    g = np.ones(len(qv))
    term = g.copy()
    norms = [1.0]
    rising = 0
    k = 1
    while True:
        term = A @ term
        g += term
        k += 1
        tn = float(np.max(np.abs(term)))
        # sup norms of (G_D q)^k 1 may grow for a few terms while the shape settles
        rising = rising + 1 if tn >= norms[-1] and k > DIVERGENCE_BURN_IN else 0
        norms.append(tn)
        if rising >= DIVERGENCE_RUN:
            return GaugeSolution(None, k, rho, False, "not_gaugeable", np.inf, nodes)
        if tn < tol:
            break
        if k >= SERIES_TERM_CAP:
            log.warning("gauge series stopped at the %d-term cap (rho = %.3f)", SERIES_TERM_CAP, rho)
            break
    tail = tn * rho / (1 - rho)
    if np.any(g <= 0):
        return GaugeSolution(None, k, rho, False, "not_gaugeable", np.inf, nodes)
    return GaugeSolution(g, k, rho, True, "gaugeable", tail, nodes)


def vq_matrix(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator) -> np.ndarray:
    """``V_q = sum_k (G_D q)^k G_D`` on the mesh (summed by a linear solve)."""
    q.check(idx)
    K = operator.matrix
    if q.is_zero:
        return K.copy()
    qv = _q_nodes(q, operator)
    rho = spectral_radius(operator, qv)
    if rho >= GAUGE_MARGIN and not np.all(qv <= 0):
        raise NotGaugeable(f"(D, q) is not gaugeable on this mesh (spectral radius {rho:.3f})")
    A = operator.weighted() * qv[None, :]
    return np.linalg.solve(np.eye(len(qv)) - A, K)


def vq(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator, i: int, j: int) -> float:
    """``V_q(x_i, y_j)`` for mesh nodes ``i != j``."""
    if i == j:
        raise ValidationError("V_q is evaluated off the diagonal")
    return float(vq_matrix(domain, idx, q, operator)[i, j])


def _green_source(domain, idx, operator, green_source):
    if green_source is not None:
        return green_source
    if isinstance(domain, Ball):
        return lambda x, y: kernels.green_ball(idx, domain, x, y, strict=False)
    nodes = operator.mesh.nodes

    def from_mesh(x, y):
        x = as_points(x, domain.n)
        y = as_points(y, domain.n)
        i = np.argmin(np.linalg.norm(nodes[None, :, :] - x[:, None, :], axis=-1), axis=1)
        j = np.argmin(np.linalg.norm(nodes[None, :, :] - y[:, None, :], axis=-1), axis=1)
        return operator.matrix[i][:, j].squeeze()

    return from_mesh


def _martin_source(domain, idx, martin_source):
    if martin_source is not None:
        return martin_source
    if isinstance(domain, Ball):
        return lambda pts, z: kernels.martin_ball(idx, domain, pts, z, strict=False)
    raise ValidationError("a martin_source is required off balls")


def _node_row(G, operator, p) -> np.ndarray:
    """``G_D(p, y_j)`` over mesh nodes; a node equal to ``p`` takes the operator's regularised diagonal."""
    nodes = operator.mesh.nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        row = np.asarray(G(p[None, :], nodes), dtype=float).reshape(-1)
    hit = np.flatnonzero(np.all(nodes == p[None, :], axis=1))
    row[hit] = operator.matrix[hit, hit]
    return row


class _Resolvent:
    """Cached ``(I - A)^-1`` applications for one potential on one mesh."""

    def __init__(self, domain, idx, q, operator):
        q.check(idx)
        self.qv = _q_nodes(q, operator)
        self.rho = spectral_radius(operator, self.qv)
        if self.rho >= GAUGE_MARGIN and not np.all(self.qv <= 0):
            raise NotGaugeable(f"(D, q) is not gaugeable on this mesh (spectral radius {self.rho:.3f})")
        self.op = operator
        self.wq = operator.mesh.weights * self.qv
        A = operator.matrix * self.wq[None, :]
        self.inv = np.linalg.inv(np.eye(len(self.qv)) - A)

    def solve(self, b):
        return self.inv @ b


def conditional_gauge(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator, x, z,
                      martin_source=None, green_source=None, *, level: int = 4, _resolvent=None) -> float:
    """``E_x^z[e_q(tau_D)] = 1 + M_D(x, z)^-1 int_D V_q(x, u) q(u) M_D(u, z) du``.

    With ``phi = q M_D(., z)`` the integral ``psi = V_q phi`` solves
    ``psi = G_D phi + G_D q psi``.  The leading term ``G_D phi (x)``, which
    carries the boundary singularity at ``z``, is integrated with a pole
    at ``z`` (balls); the correction uses the mesh.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if not domain.contains(x):
        raise ValidationError("x must be interior")
    if not domain.on_boundary(z):
        raise ValidationError("z must lie on the boundary")
    q.check(idx)
    if q.is_zero:
        return 1.0
    M = _martin_source(domain, idx, martin_source)
    G = _green_source(domain, idx, operator, green_source)
    R = _resolvent if _resolvent is not None else _Resolvent(domain, idx, q, operator)
    nodes = operator.mesh.nodes
    phi_nodes = R.qv * np.asarray(M(nodes, z), dtype=float)
    g_phi_nodes = operator.apply(phi_nodes)
    psi_nodes = R.solve(g_phi_nodes)
    g_phi_x = _green_phi(domain, idx, q, M, G, operator, x, z, level)
    gx = _node_row(G, operator, x)
    psi_x = g_phi_x + gx @ (R.wq * psi_nodes)
    return float(1.0 + psi_x / float(np.asarray(M(x[None, :], z)).reshape(-1)[0]))


def _green_phi(domain, idx, q, M, G, operator, x, z, level):
    """``int_D G_D(x, u) q(u) M_D(u, z) du``."""
    n, a = idx.n, idx.alpha
    if isinstance(domain, Ball):
        poles, exps = [x, z], [n - a, n - a]
        for p, beta in q.singularities:
            p = np.asarray(p, dtype=float)
            if domain.contains(p) and np.linalg.norm(p - x) > 0:
                poles.append(p)
                exps.append(beta)

        def f(u):
            return (np.asarray(G(x[None, :], u), dtype=float).reshape(-1) * q(u)
                    * np.asarray(M(u, z), dtype=float).reshape(-1))

        return integrate_interior(domain, f, singular_at=np.array(poles), singular_exponent=exps,
                                  level=level, max_level=level + 2, rtol=1e-6).value
    i = int(np.argmin(np.linalg.norm(operator.mesh.nodes - x, axis=1)))
    phi = q(operator.mesh.nodes) * np.asarray(M(operator.mesh.nodes, z), dtype=float)
    return float(operator.matrix[i] @ (operator.mesh.weights * phi))


def vq_column(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator, xs, y,
              green_source=None, _resolvent=None, *, level: int = 4) -> np.ndarray:
    """``V_q(x, y)`` for points ``xs`` and one interior point ``y``.

    ``V_q(., y) = G_D(., y) + psi`` with ``psi = G_D phi + G_D q psi`` and
    ``phi = q G_D(., y)``.  On balls the peaked leading term ``G_D phi`` is
    integrated with poles at ``x`` and ``y``; the correction is Nystrom
    interpolated from the mesh.
    """
    G = _green_source(domain, idx, operator, green_source)
    xs = as_points(xs, domain.n)
    y = np.asarray(y, dtype=float)
    direct = np.asarray(G(xs, y[None, :]), dtype=float).reshape(-1)
    if q.is_zero:
        return direct
    R = _resolvent if _resolvent is not None else _Resolvent(domain, idx, q, operator)
    nodes = operator.mesh.nodes
    phi_nodes = R.qv * _node_row(G, operator, y)
    psi_nodes = R.solve(operator.apply(phi_nodes))
    out = np.empty(len(xs))
    for k, x in enumerate(xs):
        if isinstance(domain, Ball):
            lead = _green_green(domain, idx, q, G, x, y, level)
        else:
            i = int(np.argmin(np.linalg.norm(nodes - x, axis=1)))
            lead = float(operator.matrix[i] @ (operator.mesh.weights * phi_nodes))
        gx = _node_row(G, operator, x)
        out[k] = direct[k] + lead + gx @ (R.wq * psi_nodes)
    return out


def _green_green(ball, idx, q, G, x, y, level):
    """``int_D G_D(x, u) q(u) G_D(u, y) du`` on a ball."""
    n, a = idx.n, idx.alpha
    poles, exps = [x, y], [n - a, n - a]
    for p, beta in q.singularities:
        p = np.asarray(p, dtype=float)
        if ball.contains(p) and min(np.linalg.norm(p - x), np.linalg.norm(p - y)) > 0:
            poles.append(p)
            exps.append(beta)

    def f(u):
        return (np.asarray(G(x[None, :], u), dtype=float).reshape(-1) * q(u)
                * np.asarray(G(u, y[None, :]), dtype=float).reshape(-1))

    return integrate_interior(ball, f, singular_at=np.array(poles), singular_exponent=exps,
                              level=level, max_level=level + 2, rtol=1e-6).value


@dataclass
class RatioLimit:
    value: float
    prediction: float
    sequence_values: list
    contraction: float


def _deterministic_limit(seq, tol):
    out = _extrapolate(np.asarray(seq), [0.0] * len(seq), tol)
    if out is None:
        return None
    converged, rho, _ = out
    return converged, rho


def vq_ratio_limit(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator, x, x0, z, *,
                   t0: float | None = None, levels: int = 8, tol: float = 1e-3, martin_source=None,
                   green_source=None) -> RatioLimit:
    """``lim_{y -> z} V_q(x, y) / V_q(x0, y)`` and its prediction ``CG(x, z) / CG(x0, z) M(x, z) / M(x0, z)``.

    The left side follows ``y_k`` on the approach sequence and is
    extrapolated geometrically from the last differences.
    """
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    t0 = 0.25 * domain.inradius if t0 is None else t0
    M = _martin_source(domain, idx, martin_source)
    R = None if q.is_zero else _Resolvent(domain, idx, q, operator)
    ys = domain.approach_sequence(z, t0, levels)
    seq = []
    for y in ys:
        v = vq_column(domain, idx, q, operator, np.vstack([x, x0]), y, green_source, R)
        seq.append(float(v[0] / v[1]))
    if np.allclose(x, x0):
        value, rho = 1.0, 0.0
    else:
        out = _deterministic_limit(seq, tol)
        if out is None:
            raise NonContraction("too few levels for a ratio limit", sequence=seq)
        converged, rho = out
        if rho >= 1.0:
            raise NonContraction(f"V_q ratio sequence does not contract (rho = {rho:.3f})", sequence=seq)
        d = seq[-1] - seq[-2]
        value = seq[-1] + d * rho / (1 - rho)
    m = np.asarray(M(np.vstack([x, x0]), z), dtype=float).reshape(-1)
    cg = [conditional_gauge(domain, idx, q, operator, p, z, martin_source, green_source, _resolvent=R)
          for p in (x, x0)]
    return RatioLimit(float(value), float(cg[0] / cg[1] * m[0] / m[1]), seq, float(rho))


def conditional_gauge_limit(domain: Domain, idx: StableIndex, q: Potential, operator: MeshGreenOperator, x, z, *,
                            t0: float | None = None, levels: int = 8, tol: float = 1e-3, martin_source=None,
                            green_source=None) -> RatioLimit:
    """``lim_{y -> z} V_q(x, y) / G_D(x, y)`` against ``conditional_gauge(x, z)``.

    ``V_q(x, y) / G_D(x, y)`` is the gauge of the process conditioned to die
    at the interior point ``y``; along the approach sequence it tends to the
    conditional gauge for the boundary pole ``z``.  ``sequence_values`` holds
    the ratios by level, ``value`` the geometric extrapolation (the finest
    ratio when the sequence shows no contraction).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    t0 = 0.25 * domain.inradius if t0 is None else t0
    G = _green_source(domain, idx, operator, green_source)
    R = None if q.is_zero else _Resolvent(domain, idx, q, operator)
    seq = []
    for y in domain.approach_sequence(z, t0, levels):
        v = vq_column(domain, idx, q, operator, x[None, :], y, green_source, R)[0]
        seq.append(float(v / float(np.asarray(G(x[None, :], y[None, :])).reshape(-1)[0])))
    value, rho = seq[-1], 0.0
    out = _deterministic_limit(seq, tol)
    if out is not None and out[1] < 1.0:
        rho = out[1]
        value = seq[-1] + (seq[-1] - seq[-2]) * rho / (1 - rho)
    cg = conditional_gauge(domain, idx, q, operator, x, z, martin_source, green_source, _resolvent=R)
    return RatioLimit(float(value), float(cg), seq, float(rho))
