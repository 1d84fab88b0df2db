"""Doob h-transforms: conditioned ball steps, z-conditioned paths, lifetimes, boundary limit laws.

For a positive ``X^D``-harmonic ``h`` the h-conditioned process leaves the
ball ``B = B(p, r)`` with density ``K_B(p, w) h(w) / h(p)`` on ``D``.  These
steps are drawn exactly by rejection.  For a Martin pole ``z`` of a ball
the target is unbounded at ``z``, so the proposal mixes the unconditioned
ball exit with a density ``psi ~ |w - z|^(alpha/2 - n)`` on a small ball
around ``z``.  In unit coordinates ``M(w, z) <= t^(alpha/2 - n) (2 - t)^(alpha/2)``
with ``t = |w - z|``, which bounds the likelihood ratio on both parts of
the proposal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import interpolate, stats

from . import kernels
from .errors import EnvelopeFailure, NotHarmonic, ValidationError
from .geometry import Ball, BoundaryMesh, Domain, StableIndex, as_points, unit_sphere_area
from .representation import DiscreteBoundaryMeasure
from .rng import as_stream, map_chunks
from .sampler import DEFAULT_SHRINK, mean_value_residual_XD, unit_exit_offsets

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-4
PATH_CHUNK = 1024
DEFAULT_MAX_STEPS = 10_000
HARMONIC_GATE = 5.0


@dataclass(frozen=True)
class HFunction:
    """Positive function on ``D`` used for conditioning, zero off ``D``.

    ``kind`` is one of ``"martin_pole"``, ``"mixture"``, ``"green_pole"``
    and ``"tabulated"``; build instances with the module-level constructors.
    """

    kind: str
    domain: Domain
    idx: StableIndex
    evaluator: Callable
    pole: np.ndarray | None = None
    measure: DiscreteBoundaryMeasure | None = None
    bound: float | None = None

    def __call__(self, points) -> np.ndarray:
        pts = as_points(points, self.domain.n)
        inside = np.asarray(self.domain.contains(pts), dtype=bool).reshape(-1)
        out = np.zeros(len(pts))
        if inside.any():
            out[inside] = self.evaluator(pts[inside])
        return out


def _require_ball(domain, what) -> Ball:
    if not isinstance(domain, Ball):
        raise ValidationError(f"{what} is available on balls; tabulate h for other domains")
    return domain


def martin_pole(domain: Domain, idx: StableIndex, z) -> HFunction:
    """``h = M_D(., z)`` normalised at the centre."""
    ball = _require_ball(domain, "MartinPole")
    z = np.asarray(z, dtype=float)
    if not ball.on_boundary(z):
        raise ValidationError(f"pole {z.tolist()} is not on the boundary")
    return HFunction("martin_pole", ball, idx,
                     lambda p: kernels.martin_ball(idx, ball, p, z, strict=False), pole=z)


def mixture(domain: Domain, idx: StableIndex, measure: DiscreteBoundaryMeasure) -> HFunction:
    """``h = sum_j M_D(., z_j) mu_j``."""
    ball = _require_ball(domain, "Mixture")
    if measure.total_mass <= 0:
        raise ValidationError("mixture measure has zero mass")
    zs = measure.mesh.nodes
    if not np.all(ball.on_boundary(zs)):
        raise ValidationError("mixture nodes must lie on the boundary")

    def ev(p):
        M = kernels.martin_ball(idx, ball, p[:, None, :], zs[None, :, :], strict=False)
        return M @ measure.weights

    return HFunction("mixture", ball, idx, ev, measure=measure)


def green_pole(domain: Domain, idx: StableIndex, y0) -> HFunction:
    """``h = G_D(., y0)``; constructed for evaluation only, never simulated."""
    ball = _require_ball(domain, "GreenPole")
    y0 = np.asarray(y0, dtype=float)
    if not ball.contains(y0):
        raise ValidationError("interior pole must lie in the domain")
    return HFunction("green_pole", ball, idx,
                     lambda p: kernels.green_ball(idx, ball, p, y0, strict=False), pole=y0)


def tabulated(domain: Domain, idx: StableIndex, nodes, values, *, check: bool = True,
              n_check: int = 20_000, probes: int = 4, rng=0) -> HFunction:
    """``h`` from values at interior nodes, linearly interpolated.

    With ``check`` the mean-value residual of the killed process is tested
    on ``probes`` balls around the deepest nodes; residuals beyond five
    standard errors reject the table.
    """
    nodes = as_points(nodes, domain.n)
    values = np.asarray(values, dtype=float)
    if values.shape != (len(nodes),):
        raise ValidationError("one value per node is required")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValidationError("tabulated h must be finite and strictly positive")
    if domain.n == 1:
        order = np.argsort(nodes[:, 0])
        xs, vs = nodes[order, 0], values[order]
        ev = lambda p: np.interp(p[:, 0], xs, vs)
    else:
        lin = interpolate.LinearNDInterpolator(nodes, values)
        near = interpolate.NearestNDInterpolator(nodes, values)

        def ev(p):
            v = lin(p)
            bad = ~np.isfinite(v)
            if bad.any():
                v[bad] = near(p[bad])
            return v

    h = HFunction("tabulated", domain, idx, ev, bound=float(values.max()))
    if check:
        depth = np.asarray(domain.dist_to_boundary(nodes), dtype=float)
        stream = as_stream(rng).child(0x6874)
        for k, i in enumerate(np.argsort(-depth)[:probes]):
            ball = Ball(nodes[i], 0.5 * depth[i])
            est = mean_value_residual_XD(domain, ball, idx, h, n_check, stream.child(k), guard=False)
            zs = abs(est.z_score())
            if zs > HARMONIC_GATE:
                raise NotHarmonic(
                    f"tabulated h fails the mean-value gate at {nodes[i].tolist()} (|z| = {zs:.1f})",
                    worst={"point": nodes[i].tolist(), "residual": est.value, "std_error": est.std_error},
                )
    return h


def constant(domain: Domain, idx: StableIndex, value: float = 1.0) -> HFunction:
    """``h`` equal to ``value`` on ``D``; not harmonic, steps are conditioned to stay in ``D``."""
    if value <= 0:
        raise ValidationError("h must be positive")
    return HFunction("tabulated", domain, idx, lambda p: np.full(len(p), float(value)), bound=float(value))


@dataclass
class ConditionedPath:
    points: np.ndarray
    terminal: np.ndarray
    steps: int
    stopped_reason: str  # "pole" or "max_steps"


def _directions(n: int, gen: np.random.Generator, size: int) -> np.ndarray:
    if n == 1:
        return np.where(gen.random(size) < 0.5, -1.0, 1.0)[:, None]
    v = gen.standard_normal((size, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _pole_envelope(idx: StableIndex, p, z, r):
    """Mixture weight, envelope constant and pole radius for unit-ball pole steps."""
    n, a = idx.n, idx.alpha
    d = np.linalg.norm(p - z, axis=1)
    s = 0.5 * (d - r)
    hp = np.maximum(1 - np.sum(p * p, axis=1), 0.0) ** (a / 2) / d**n
    far = s ** (a / 2 - n) * (2 - s) ** (a / 2) / hp
    rs = r + s
    k_max = kernels.constants(idx).poisson_const * r**a / (((rs**2 - r**2) ** (a / 2)) * rs**n)
    c_s = (a / 2) / (unit_sphere_area(n) * s ** (a / 2))
    near = k_max * 2 ** (a / 2) / (hp * c_s)
    omega = far + near
    return near / omega, omega, s, c_s, hp


def _pole_steps(idx: StableIndex, p, z, shrink: float, gen: np.random.Generator) -> np.ndarray:
    """One exact conditioned step per row of ``p`` (unit ball, poles ``z``)."""
    n, a = idx.n, idx.alpha
    C = kernels.constants(idx).poisson_const
    r = shrink * (1 - np.linalg.norm(p, axis=1))
    eps, omega, s, c_s, hp = _pole_envelope(idx, p, z, r)
    if np.any(1 / omega < MIN_ACCEPTANCE):
        i = int(np.argmax(omega))
        raise EnvelopeFailure(
            f"conditioned step acceptance {1 / omega[i]:.2e} below {MIN_ACCEPTANCE}",
            stats={"point": p[i].tolist(), "pole": z[i].tolist(), "h": float(hp[i]),
                   "envelope": float(omega[i])},
        )
    out = np.empty_like(p)
    todo = np.arange(len(p))
    while todo.size:
        m = todo.size
        pi, zi, ri, si = p[todo], z[todo], r[todo], s[todo]
        near = gen.random(m) < eps[todo]
        w = pi + ri[:, None] * unit_exit_offsets(idx, gen, m)
        k = int(near.sum())
        if k:
            t = si[near] * gen.random(k) ** (2 / a)
            w[near] = zi[near] + t[:, None] * _directions(n, gen, k)
        dp = np.linalg.norm(w - pi, axis=1)
        tz = np.linalg.norm(w - zi, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            K = np.where(dp > ri, C * ri**a / (np.abs(dp**2 - ri**2) ** (a / 2) * dp**n), 0.0)
            psi = np.where(tz < si, c_s[todo] * tz ** (a / 2 - n), 0.0)
            hw = np.where(np.sum(w * w, axis=1) < 1,
                          np.maximum(1 - np.sum(w * w, axis=1), 0.0) ** (a / 2) / tz**n, 0.0)
        e = eps[todo]
        q = (1 - e) * K + e * psi
        f = K * hw / hp[todo]
        accept = gen.random(m) * omega[todo] * q < f
        out[todo[accept]] = w[accept]
        todo = todo[~accept]
    return out


def _bounded_steps(h: HFunction, p, shrink: float, gen: np.random.Generator) -> np.ndarray:
    """Rejection from the unconditioned ball exit with envelope ``h.bound``."""
    dom, idx = h.domain, h.idx
    r = shrink * np.asarray(dom.dist_to_boundary(p), dtype=float).reshape(-1)
    hp = h(p)
    ratio = hp / h.bound
    if np.any(ratio < MIN_ACCEPTANCE):
        i = int(np.argmin(ratio))
        raise EnvelopeFailure(
            f"conditioned step acceptance {ratio[i]:.2e} below {MIN_ACCEPTANCE}",
            stats={"point": p[i].tolist(), "h": float(hp[i]), "envelope": h.bound},
        )
    out = np.empty_like(p)
    todo = np.arange(len(p))
    while todo.size:
        w = p[todo] + r[todo, None] * unit_exit_offsets(idx, gen, todo.size)
        accept = gen.random(todo.size) * h.bound < h(w)
        out[todo[accept]] = w[accept]
        todo = todo[~accept]
    return out


def _steps(h: HFunction, p, poles, shrink: float, gen: np.random.Generator) -> np.ndarray:
    """One conditioned step per row; ``poles`` holds each row's Martin pole when ``h`` has poles."""
    if h.kind == "green_pole":
        raise ValidationError("interior-pole conditioning is not simulated")
    if h.kind == "tabulated":
        return _bounded_steps(h, p, shrink, gen)
    ball = h.domain
    pu = ball.to_unit(p)
    zu = ball.to_unit(poles)
    return ball.center + ball.radius * _pole_steps(h.idx, pu, zu, shrink, gen)


def _mixture_poles(h: HFunction, p, gen: np.random.Generator) -> np.ndarray:
    """Pole per row drawn with probability ``M(p, z_j) mu_j / h(p)``."""
    zs = h.measure.mesh.nodes
    w = kernels.martin_ball(h.idx, h.domain, p[:, None, :], zs[None, :, :], strict=False) * h.measure.weights
    cdf = np.cumsum(w, axis=1)
    u = gen.random(len(p)) * cdf[:, -1]
    j = np.minimum((cdf < u[:, None]).sum(axis=1), len(zs) - 1)
    return zs[j]


def conditioned_step(domain: Domain, idx: StableIndex, p, h: HFunction, shrink: float = DEFAULT_SHRINK,
                     rng=0) -> np.ndarray:
    """Exact draw from ``K_B(p, w) h(w) / h(p)`` on ``D`` with ``B = B(p, shrink delta(p))``.

    Mixtures pick a pole with probability ``M(p, z_j) mu_j / h(p)`` and take
    that pole's step, which is the same law.
    """
    if h.domain != domain or h.idx != idx:
        raise ValidationError("h was built for a different domain or index")
    if not (0 < shrink < 1):
        raise ValidationError("conditioned steps need shrink in (0, 1)")
    gen = rng if isinstance(rng, np.random.Generator) else as_stream(rng).generator(0)
    p = as_points(p, domain.n)
    if not np.all(domain.contains(p)):
        raise ValidationError("p must be interior")
    if h.kind == "mixture":
        poles = _mixture_poles(h, p, gen)
    else:
        poles = None if h.pole is None else np.broadcast_to(h.pole, p.shape)
    return _steps(h, p, poles, shrink, gen)[0]


def _run_paths(h: HFunction, x, poles, shrink, eps_stop, max_steps, gen, record):
    m = len(poles)
    p = np.broadcast_to(np.asarray(x, dtype=float), (m, h.domain.n)).copy()
    steps = np.zeros(m, dtype=np.int64)
    trace = [[row.copy()] for row in p] if record else None
    active = np.flatnonzero(np.linalg.norm(p - poles, axis=1) >= eps_stop)
    while active.size:
        active = active[steps[active] < max_steps]
        if not active.size:
            break
        q = _steps(h, p[active], poles[active], shrink, gen)
        if not np.all(h.domain.contains(q)):
            raise AssertionError("conditioned step left the domain")
        p[active] = q
        steps[active] += 1
        if record:
            for i, row in zip(active, q):
                trace[i].append(row.copy())
        active = active[np.linalg.norm(q - poles[active], axis=1) >= eps_stop]
    reached = np.linalg.norm(p - poles, axis=1) < eps_stop
    return p, steps, reached, trace


def simulate_conditioned_paths(domain: Domain, idx: StableIndex, x, h: HFunction, n_paths: int, rng, *,
                               shrink: float = DEFAULT_SHRINK, eps_stop: float | None = None,
                               max_steps: int = DEFAULT_MAX_STEPS, record: bool = False,
                               threads: int | None = None) -> list[ConditionedPath]:
    """Independent z-conditioned paths from ``x`` for a Martin pole or mixture ``h``.

    A path stops once it is within ``eps_stop`` (default ``1e-2`` inradius)
    of its pole or after ``max_steps`` steps.  Mixtures draw one pole per
    path from ``M(x, z_j) mu_j / h(x)``.  Without ``record`` only the start
    and the terminal point are kept.
    """
    if h.kind not in ("martin_pole", "mixture"):
        raise ValidationError("path simulation needs a Martin pole or a mixture of poles")
    if h.domain != domain or h.idx != idx:
        raise ValidationError("h was built for a different domain or index")
    x = np.asarray(x, dtype=float)
    if not domain.contains(x):
        raise ValidationError("x must be interior")
    eps = 1e-2 * domain.inradius if eps_stop is None else float(eps_stop)

    def run(gen, count, _):
        start = np.broadcast_to(x, (count, domain.n))
        poles = (_mixture_poles(h, start, gen) if h.kind == "mixture"
                 else np.broadcast_to(h.pole, (count, domain.n)).copy())
        p, steps, reached, trace = _run_paths(h, x, poles, shrink, eps, max_steps, gen, record)
        out = []
        for i in range(count):
            pts = np.array(trace[i]) if record else np.vstack([x, p[i]])
            out.append(ConditionedPath(pts, p[i].copy(), int(steps[i]), "pole" if reached[i] else "max_steps"))
        return out

    parts = map_chunks(run, as_stream(rng).child(0x636F), n_paths, threads, chunk_size=PATH_CHUNK)
    paths = [q for part in parts for q in part]
    failed = sum(q.stopped_reason == "max_steps" for q in paths)
    if failed:
        log.warning("%d of %d conditioned paths reached max_steps", failed, len(paths))
    return paths


def simulate_conditioned_path(domain: Domain, idx: StableIndex, x, h: HFunction, shrink: float = DEFAULT_SHRINK,
                              eps_stop: float | None = None, max_steps: int = DEFAULT_MAX_STEPS,
                              rng=0) -> ConditionedPath:
    """One recorded conditioned path; see :func:`simulate_conditioned_paths`."""
    return simulate_conditioned_paths(domain, idx, x, h, 1, rng, shrink=shrink, eps_stop=eps_stop,
                                      max_steps=max_steps, record=True)[0]


def median_distance_profile(paths: list[ConditionedPath], z) -> np.ndarray:
    """Median distance to ``z`` at each step index over recorded paths still running."""
    z = np.asarray(z, dtype=float)
    longest = max(len(q.points) for q in paths)
    prof = np.full(longest, np.nan)
    for k in range(longest):
        d = [np.linalg.norm(q.points[k] - z) for q in paths if len(q.points) > k]
        prof[k] = np.median(d)
    return prof


def conditional_lifetime(domain: Domain, idx: StableIndex, x, z, *, operator=None, martin_source=None,
                         level: int = 4) -> float:
    """``E_x^z[tau_D] = M_D(x, z)^-1 int_D G_D(x, y) M_D(y, z) dy``.

    Balls use closed-form kernels and a quadrature with poles at ``x``
    (exponent ``n - alpha``) and at ``z`` (where the integrand behaves like
    ``|y - z|^(alpha - n)``).  With a :class:`~stablepot.quad.MeshGreenOperator`
    the integral is the Nystrom sum over the mesh row of the nearest node,
    and ``martin_source(points, z)`` supplies Martin values.
    """
    from .quad import integrate_interior

    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n, a = idx.n, idx.alpha
    if not domain.contains(x):
        raise ValidationError("x must be interior")
    if not domain.on_boundary(z):
        raise ValidationError("z must lie on the boundary")
    if operator is not None:
        M = martin_source if martin_source is not None else _ball_martin(domain, idx)
        nodes, w = operator.mesh.nodes, operator.mesh.weights
        i = int(np.argmin(np.linalg.norm(nodes - x, axis=1)))
        mz = np.asarray(M(nodes, z), dtype=float)
        return float(operator.matrix[i] @ (w * mz) / mz[i])
    ball = _require_ball(domain, "closed-form conditional lifetime")

    def f(y):
        g = kernels.green_ball(idx, ball, x, y, strict=False)
        return g * kernels.martin_ball(idx, ball, y, z, strict=False)

    res = integrate_interior(ball, f, singular_at=np.vstack([x, z]),
                             singular_exponent=[n - a, n - a], level=level, max_level=level + 2, rtol=1e-6)
    return res.value / kernels.martin_ball(idx, ball, x, z)


def _ball_martin(domain, idx):
    ball = _require_ball(domain, "default Martin source")
    return lambda pts, z: kernels.martin_ball(idx, ball, pts, z, strict=False)


@dataclass
class BoundaryLimitLaw:
    """Analytic and empirical laws of the terminal point over boundary patches."""

    analytic_nodes: np.ndarray
    analytic: np.ndarray
    empirical: np.ndarray
    counts: np.ndarray
    p_value: float
    flagged: bool
    patches: BoundaryMesh = field(repr=False, default=None)
    paths: list = field(repr=False, default_factory=list)


def _tied_assignment(patches: BoundaryMesh, nodes) -> np.ndarray:
    """Row-stochastic node-to-patch matrix; equidistant patches share a node's mass."""
    d = np.linalg.norm(nodes[:, None, :] - patches.nodes[None, :, :], axis=-1)
    near = d <= d.min(axis=1, keepdims=True) * (1 + 1e-9) + 1e-12
    return near / near.sum(axis=1, keepdims=True)


def boundary_limit_law(domain: Domain, idx: StableIndex, x, measure: DiscreteBoundaryMeasure,
                       n_paths: int, rng, *, patches: BoundaryMesh | None = None,
                       shrink: float = DEFAULT_SHRINK, eps_stop: float | None = None,
                       max_steps: int = DEFAULT_MAX_STEPS, threads: int | None = None,
                       alpha_level: float = 0.01) -> BoundaryLimitLaw:
    """Law of ``lim X_t`` under ``P_x^h`` with ``h = sum_j M_D(., z_j) mu_j``.

    The analytic law puts mass ``M_D(x, z_j) mu_j / h(x)`` on node ``j``;
    the empirical law is the histogram of terminal points of conditioned
    paths over ``patches`` (nearest patch node).  A chi-square mismatch at
    ``alpha_level`` is flagged.
    """
    h = mixture(domain, idx, measure)
    x = np.asarray(x, dtype=float)
    hx = float(h(x[None, :])[0])
    mx = kernels.martin_ball(idx, domain, x, measure.mesh.nodes)
    law = mx * measure.weights / hx
    patches = measure.mesh if patches is None else patches
    paths = simulate_conditioned_paths(domain, idx, x, h, n_paths, rng, shrink=shrink, eps_stop=eps_stop,
                                       max_steps=max_steps, threads=threads)
    ends = np.array([q.terminal for q in paths if q.stopped_reason == "pole"])
    k = len(patches)
    counts = np.bincount(patches.nearest(ends), minlength=k) if len(ends) else np.zeros(k, dtype=int)
    expected = law @ _tied_assignment(patches, measure.mesh.nodes)
    support = expected > 0
    if np.any(counts[~support]):
        p_value = 0.0
    elif support.sum() < 2:
        p_value = 1.0
    else:
        e = expected[support] * counts.sum() / expected[support].sum()
        p_value = float(stats.chisquare(counts[support], e).pvalue)
    flagged = p_value < alpha_level
    if flagged:
        log.warning("boundary limit histogram departs from the analytic law (p = %.3g)", p_value)
    total = max(counts.sum(), 1)
    return BoundaryLimitLaw(measure.mesh.nodes, law, counts / total, counts, p_value, flagged, patches, paths)
