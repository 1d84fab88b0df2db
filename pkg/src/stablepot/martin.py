"""Monte Carlo Green functions, Martin kernels as boundary ratio limits, and the 3G probe.

On a general domain the Green function follows from the whole-space kernel
and the exit law, ``G_D(x, y) = G(x, y) - E_x[G(X_{tau_D}, y)]``.  The Martin
kernel ``M_D(x, z)`` is the limit of ``G_D(x, y) / G_D(x0, y)`` as ``y -> z``.
Both Green values in the ratio are computed from walks started at ``y``
(using the symmetry of ``G_D``), so numerator and denominator share every
random number.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonContraction, RecurrentRegime, ValidationError
from .geometry import Ball, Domain, StableIndex, as_points
from .rng import as_stream, map_chunks
from .sampler import DEFAULT_MAX_STEPS, DEFAULT_SHRINK, McEstimate, wos_batch

log = logging.getLogger(__name__)

MAX_LEVELS = 20
MIN_LEVELS = 4
_MIN_CONTRACTION = 0.5


@dataclass
class MartinEstimate:
    x0: np.ndarray
    x: np.ndarray
    z: np.ndarray
    value: float
    sequence_values: list = field(default_factory=list)
    error_bound: float = 0.0
    std_error: float = 0.0
    contraction: float = 0.0

    @property
    def levels(self) -> int:
        return len(self.sequence_values)


def _check_green_args(domain, idx, x, y):
    if not idx.transient:
        raise RecurrentRegime("Monte Carlo Green functions need n > alpha")
    if not np.all(domain.contains(x)) or not np.all(domain.contains(y)):
        raise ValidationError("Green function arguments must be interior")
    if np.any(np.atleast_1d(domain.dist_to_boundary(y)) < 1e-6 * domain.diameter):
        raise ValidationError("y lies within 1e-6 of the boundary; the estimator variance blows up")


def green_exit_samples(domain: Domain, idx: StableIndex, start, targets, n_samples: int, rng,
                       shrink: float = DEFAULT_SHRINK, max_steps: int = DEFAULT_MAX_STEPS,
                       threads: int | None = None):
    """Per-walk values ``G(X_tau, t)`` for walks from ``start``, for every target ``t``.

    Returns ``(values, exit_times)`` with ``values`` of shape
    ``(n_samples, len(targets))`` in chunk order.
    """
    start = np.asarray(start, dtype=float)
    targets = as_points(targets, domain.n)

    def run(gen, count, _):
        pts, _, tau = wos_batch(domain, idx, np.broadcast_to(start, (count, domain.n)), shrink, gen, max_steps)
        return kernels.green_whole(idx, pts[:, None, :], targets[None, :, :]), tau

    parts = map_chunks(run, as_stream(rng), n_samples, threads)
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def green_mc(domain: Domain, idx: StableIndex, x, y, n_samples: int, rng, shrink: float = DEFAULT_SHRINK,
             threads: int | None = None) -> McEstimate:
    """``G_D(x, y) = G(x, y) - E_x[G(X_{tau_D}, y)]`` by walk-on-spheres from ``x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.array_equal(x, y):
        raise ValidationError("green_mc needs x != y")
    _check_green_args(domain, idx, x, y)
    vals, _ = green_exit_samples(domain, idx, x, y[None, :], n_samples, rng, shrink, threads=threads)
    v = vals[:, 0]
    est = kernels.green_whole(idx, x, y) - v.mean()
    se = v.std(ddof=1) / np.sqrt(len(v))
    return McEstimate(float(est), float(se), len(v), as_stream(rng).seed)


def green_mc_rows(domain: Domain, idx: StableIndex, nodes, n_samples: int = 4000, seed: int = 0,
                  shrink: float = DEFAULT_SHRINK, threads: int | None = None):
    """Monte Carlo Green matrix on ``nodes``: one walk batch per row, row-indexed streams.

    Returns ``(K, std_errors, exit_times)``; the diagonal of ``K`` is left at zero.
    """
    nodes = as_points(nodes, domain.n)
    m = len(nodes)
    K = np.zeros((m, m))
    se = np.zeros((m, m))
    tau = np.zeros(m)
    base = as_stream(seed).child(0x6D61)
    for i in range(m):
        vals, t = green_exit_samples(domain, idx, nodes[i], nodes, n_samples, base.child(i), shrink,
                                     threads=threads)
        with np.errstate(divide="ignore"):
            K[i] = kernels.green_whole(idx, nodes[i][None, :], nodes) - vals.mean(axis=0)
        se[i] = vals.std(axis=0, ddof=1) / np.sqrt(n_samples)
        tau[i] = t.mean()
        K[i, i] = 0.0
    return K, se, tau


def _extrapolate(seq, ses, tol):
    """Stopping test and contraction estimate for a ratio sequence.

    Returns ``None`` before two differences exist, else
    ``(converged, rho, noise_limited)``; ``rho`` is the geometric mean of the
    last two difference ratios.
    """
    d = np.diff(seq)
    if len(d) < 2:
        return None
    a = np.abs(d)
    ratios = a[1:] / np.maximum(a[:-1], 1e-300)
    rho = float(np.exp(np.mean(np.log(np.maximum(ratios[-2:], 1e-300)))))
    noise = 2.0 * max(ses[-1], ses[-2])
    noise_limited = a[-1] <= noise
    converged = a[-1] <= tol * abs(seq[-1]) or noise_limited
    return converged, rho, noise_limited


def _resolved_growth(seq, ses, tol) -> bool:
    """True when the last two differences share a sign, grow, and exceed tolerance and noise."""
    d = np.diff(seq)[-2:]
    s = np.asarray(ses)
    noise = 2.0 * np.hypot(s[-2:], s[-3:-1])
    floor = np.maximum(tol * abs(seq[-1]), noise)
    return bool(d[0] * d[1] > 0 and np.all(np.abs(d) > floor) and abs(d[1]) > abs(d[0]))


def martin_estimates(domain: Domain, idx: StableIndex, x0, xs, z, t0: float, rng, tol: float = 5e-3,
                     n_samples: int = 100_000, shrink: float = DEFAULT_SHRINK,
                     max_levels: int = MAX_LEVELS, min_levels: int = MIN_LEVELS,
                     threads: int | None = None) -> list[MartinEstimate]:
    """Martin kernel ratio limits at several points ``xs`` for one pole ``z``.

    Level ``k`` places ``y_k`` on the approach sequence ``z + t0 2^-k u`` and
    estimates ``G_D(x, y_k) / G_D(x0, y_k)`` with one walk batch from ``y_k``
    shared by every ``x`` and by ``x0``.  Every level reuses the same random
    stream, so level-to-level differences are not inflated by fresh noise.
    The sequence stops once successive ratios differ by at most
    ``tol |ratio|`` (or by less than two standard errors); the limit is
    extrapolated geometrically with the observed contraction ``rho``.  Level
    ``k`` uses ``n_samples 2^(k alpha / 2)`` walks.  The reported
    ``error_bound`` is ``(|d_K| + 2 SE_d) rho / (1 - rho) + 2 SE`` where
    ``SE_d`` bounds the noise in the last difference ``d_K``.
    """
    x0 = np.asarray(x0, dtype=float)
    xs = as_points(xs, domain.n)
    z = np.asarray(z, dtype=float)
    targets = np.vstack([x0[None, :], xs])
    if not np.all(domain.contains(targets)):
        raise ValidationError("x and x0 must be interior")
    stream = as_stream(rng)
    ys = domain.approach_sequence(z, t0, max_levels)
    seqs = [[] for _ in xs]
    ses = [[] for _ in xs]
    G = lambda p, t: kernels.green_whole(idx, p, t)
    done = np.zeros(len(xs), dtype=bool)
    same = np.all(xs == x0[None, :], axis=1)
    results: list[MartinEstimate | None] = [None] * len(xs)
    for k, y in enumerate(ys):
        # deep excursions near z get rarer like t^(alpha/2); keep relative noise level
        n_k = int(np.ceil(n_samples * 2.0 ** (k * idx.alpha / 2)))
        vals, _ = green_exit_samples(domain, idx, y, targets, n_k, stream, shrink, threads=threads)
        den_samples = G(y, x0) - vals[:, 0]
        den = den_samples.mean()
        for j in np.flatnonzero(~done):
            if same[j]:
                seqs[j].append(1.0)
                ses[j].append(0.0)
                continue
            num_samples = G(y, xs[j]) - vals[:, j + 1]
            r = num_samples.mean() / den
            # delta method with shared samples
            resid = num_samples - r * den_samples
            ses[j].append(float(resid.std(ddof=1) / np.sqrt(n_k) / abs(den)))
            seqs[j].append(float(r))
        for j in np.flatnonzero(~done):
            if same[j]:
                if k + 1 >= 2:
                    results[j] = MartinEstimate(x0, xs[j], z, 1.0, seqs[j], 0.0, 0.0, 0.0)
                    done[j] = True
                continue
            if k + 1 < min_levels:
                continue
            out = _extrapolate(np.array(seqs[j]), ses[j], tol)
            if out is None:
                continue
            converged, rho, noise_limited = out
            if not converged:
                if rho >= 1.0 and _resolved_growth(seqs[j], ses[j], tol):
                    raise NonContraction(
                        f"ratio sequence does not contract (rho = {rho:.3f}) at x = {xs[j].tolist()}",
                        sequence=list(seqs[j]),
                    )
                continue
            if rho >= 1.0 or noise_limited:
                # differences below tolerance or noise carry no contraction information
                rho = min(rho, _MIN_CONTRACTION)
            if converged:
                rho_star = max(rho, _MIN_CONTRACTION)
                dK = seqs[j][-1] - seqs[j][-2]
                factor = rho_star / (1 - rho_star)
                tail = dK * factor
                # the observed last difference is itself noisy
                se_d = float(np.hypot(ses[j][-1], ses[j][-2]))
                bound = (abs(dK) + 2 * se_d) * factor + 2 * ses[j][-1]
                results[j] = MartinEstimate(
                    x0, xs[j], z, seqs[j][-1] + tail, list(seqs[j]), bound, ses[j][-1], rho,
                )
                done[j] = True
        if done.all():
            break
    if not done.all():
        j = int(np.flatnonzero(~done)[0])
        raise NonContraction(
            f"ratio sequence did not settle within {len(ys)} levels at x = {xs[j].tolist()}",
            sequence=list(seqs[j]),
        )
    return results


def martin_estimate(domain: Domain, idx: StableIndex, x0, x, z, t0: float, rng, tol: float = 5e-3,
                    n_samples: int = 100_000, method: str = "auto", **kw) -> MartinEstimate:
    """Martin kernel ``M_D(x, z)`` with reference point ``x0``.

    ``method="auto"`` uses the closed form on balls (with ``x0`` the
    centre) and the Monte Carlo ratio limit elsewhere; ``"mc"`` forces the
    ratio limit.
    """
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if method not in ("auto", "mc", "closed"):
        raise ValidationError(f"unknown method {method!r}")
    closed_ok = isinstance(domain, Ball) and np.allclose(x0, domain.center)
    if method == "closed" or (method == "auto" and closed_ok):
        if not closed_ok:
            raise ValidationError("closed-form Martin kernels need a ball with x0 at its centre")
        v = kernels.martin_ball(idx, domain, x, z)
        return MartinEstimate(x0, x, z, float(v), [float(v)], 0.0, 0.0, 0.0)
    return martin_estimates(domain, idx, x0, x[None, :], z, t0, rng, tol, n_samples, **kw)[0]


def three_g_ratio(domain: Domain, idx: StableIndex, x, y, z, martin_source=None, green_source=None):
    """Both sides of the 3G inequality for triples ``(x, y, z)``.

    ``lhs = G_D(x, y) M_D(y, z) / M_D(x, z)`` and
    ``rhs = |x - z|^(n - alpha) / (|x - y|^(n - alpha) |y - z|^(n - alpha))``.
    Balls use closed forms; other domains need ``martin_source(points, z)``
    and ``green_source(x, y)`` callables.
    """
    if not idx.transient:
        raise RecurrentRegime("the 3G bound is stated for n > alpha")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(np.linalg.norm(x - y, axis=-1) == 0) or np.any(np.linalg.norm(y - z, axis=-1) == 0):
        raise ValidationError("3G ratio needs x != y and y != z")
    if martin_source is None or green_source is None:
        if not isinstance(domain, Ball):
            raise ValidationError("non-ball domains need explicit Green and Martin sources")
        martin_source = martin_source or (lambda p, w: kernels.martin_ball(idx, domain, p, w))
        green_source = green_source or (lambda p, q: kernels.green_ball(idx, domain, p, q))
    e = idx.n - idx.alpha
    lhs = green_source(x, y) * martin_source(y, z) / martin_source(x, z)
    rhs = (np.linalg.norm(x - z, axis=-1) ** e
           / (np.linalg.norm(x - y, axis=-1) ** e * np.linalg.norm(y - z, axis=-1) ** e))
    return lhs, rhs


def random_triples(ball: Ball, count: int, gen: np.random.Generator):
    """Uniform ``x, y`` in ``ball`` and uniform ``z`` on its sphere."""
    n = ball.n

    def uniform_ball(m):
        v = gen.standard_normal((m, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return ball.center + ball.radius * v * gen.random(m)[:, None] ** (1.0 / n)

    w = gen.standard_normal((count, n))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return uniform_ball(count), uniform_ball(count), ball.center + ball.radius * w


def three_g_sup(ball: Ball, idx: StableIndex, count: int, rng) -> float:
    """Empirical sup of ``lhs / rhs`` over ``count`` random triples."""
    gen = as_stream(rng).generator(0)
    x, y, z = random_triples(ball, count, gen)
    lhs, rhs = three_g_ratio(ball, idx, x, y, z)
    return float(np.max(lhs / rhs))
