"""Monte Carlo engine: exact ball exits, walk-on-spheres, harmonic measure, mean-value residuals.

Started at the centre of a ball of radius ``r``, the exit position of the
symmetric alpha-stable process is ``r V / sqrt(U)`` with ``V`` uniform on the
sphere and ``U ~ Beta(alpha/2, 1 - alpha/2)``; this follows from the radial
profile of the ball Poisson kernel and makes every ball step exact.
Walk-on-spheres chains such steps through inscribed balls until the walker
jumps out of the domain, which it does in finitely many steps because the
process leaves by a jump rather than by creeping through the boundary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import MaxStepsExceeded, ValidationError
from .geometry import Ball, Domain, StableIndex, as_points
from .rng import RngStream, RunningMoments, as_stream, chunk_sizes, map_chunks, merge_all

log = logging.getLogger(__name__)

DEFAULT_SHRINK = 0.5
DEFAULT_MAX_STEPS = 10_000
KURTOSIS_LIMIT = 0.3


@dataclass(frozen=True)
class ExitRecord:
    start: np.ndarray
    exit_point: np.ndarray
    steps: int
    final_ball: Ball


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo mean with ``std_error = sample std / sqrt(n_samples)``.

    ``flagged`` is set when the variance guard detected heavy tails.
    """

    value: float
    std_error: float
    n_samples: int
    seed: int
    flagged: bool = False

    def z_score(self, reference: float = 0.0) -> float:
        if self.std_error == 0:
            return 0.0 if self.value == reference else np.inf
        return (self.value - reference) / self.std_error


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator(0)


def unit_exit_offsets(idx: StableIndex, gen: np.random.Generator, size: int) -> np.ndarray:
    """Exit positions from the unit ball started at its centre, shape ``(size, n)``."""
    a = idx.alpha / 2
    g1 = gen.standard_gamma(a, size)
    g2 = gen.standard_gamma(1.0 - a, size)
    radius = np.sqrt(1.0 + g2 / g1)  # 1/sqrt(U), U = g1/(g1+g2) ~ Beta(a, 1-a)
    # g2/g1 below machine epsilon rounds the radius to 1; keep the exit strictly outside
    radius = np.maximum(radius, 1.0 + 4 * np.finfo(float).eps)
    if idx.n == 1:
        direction = np.where(gen.random(size) < 0.5, -1.0, 1.0)[:, None]
    else:
        direction = gen.standard_normal((size, idx.n))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return radius[:, None] * direction


def sample_center_exit(idx: StableIndex, ball: Ball, rng, size: int | None = None) -> np.ndarray:
    """Draw(s) from ``poisson_ball(center, .)``: the exit position from ``ball`` started at its centre."""
    if ball.n != idx.n:
        raise ValidationError("ball and index dimensions differ")
    gen = _generator(rng)
    z = ball.center + ball.radius * unit_exit_offsets(idx, gen, 1 if size is None else size)
    return z[0] if size is None else z


def _check_shrink(domain, shrink):
    if not (0.0 < shrink <= 1.0):
        raise ValidationError(f"shrink must lie in (0, 1], got {shrink}")


def wos_batch(domain: Domain, idx: StableIndex, starts, shrink: float, gen: np.random.Generator,
              max_steps: int = DEFAULT_MAX_STEPS):
    """Vectorised walk-on-spheres from each row of ``starts``.

    Returns ``(exit_points, steps, exit_times)`` where ``exit_times`` sums the
    mean exit time ``c r^alpha`` of every ball visited, an unbiased estimate
    of ``E_x[tau_D]`` along the walk.
    """
    from .kernels import constants

    c_tau = constants(idx).exit_time_const
    _check_shrink(domain, shrink)
    p = as_points(starts, domain.n).copy()
    d = domain.interior_distance(p)
    if np.any(d <= 0):
        raise ValidationError("walk-on-spheres needs interior starting points")
    m = len(p)
    steps = np.zeros(m, dtype=np.int64)
    occupation = np.zeros(m)
    active = np.arange(m)
    while active.size:
        if steps[active[0]] >= max_steps:
            raise MaxStepsExceeded(
                f"{active.size} walks exceeded {max_steps} steps", trajectory=p[active].copy()
            )
        r = shrink * d[active]
        trial = p[active] + r[:, None] * unit_exit_offsets(idx, gen, active.size)
        dn = domain.interior_distance(trial)
        # a jump rounding exactly onto the boundary is a floating-point tie
        # of probability zero for the process; such steps are redrawn
        moved = dn != 0
        idx_moved = active[moved]
        p[idx_moved] = trial[moved]
        d[idx_moved] = dn[moved]
        steps[active] += 1
        occupation[active] += c_tau * r**idx.alpha
        active = active[~moved | (dn > 0)]
    return p, steps, occupation


def walk_on_spheres(domain: Domain, idx: StableIndex, x, shrink: float = DEFAULT_SHRINK, rng=0,
                    max_steps: int = DEFAULT_MAX_STEPS) -> ExitRecord:
    """One walk-on-spheres run; the exit point has the law of ``X_{tau_D}`` started at ``x``."""
    _check_shrink(domain, shrink)
    gen = _generator(rng)
    x = np.asarray(x, dtype=float)
    p = x.copy()
    d = float(domain.dist_to_boundary(p))
    if d <= 0:
        raise ValidationError("walk-on-spheres needs an interior starting point")
    path = [p.copy()]
    for step in range(1, max_steps + 1):
        r = shrink * d
        trial = p + r * unit_exit_offsets(idx, gen, 1)[0]
        dn = float(domain.interior_distance(trial)[0])
        if dn == 0:
            continue
        centre, p, d = p, trial, dn
        path.append(p.copy())
        if d < 0:
            return ExitRecord(x, p, step, Ball(centre, r))
    raise MaxStepsExceeded(f"walk exceeded {max_steps} steps", trajectory=np.array(path))


def exit_points(domain: Domain, idx: StableIndex, x, n_samples: int, rng, shrink: float = DEFAULT_SHRINK,
                max_steps: int = DEFAULT_MAX_STEPS, threads: int | None = None, first_chunk: int = 0):
    """``n_samples`` exit positions from ``x`` (chunk-ordered) and their step counts."""
    stream = as_stream(rng)
    x = np.asarray(x, dtype=float)

    def run(gen, count, _):
        pts, steps, _ = wos_batch(domain, idx, np.broadcast_to(x, (count, domain.n)), shrink, gen, max_steps)
        return pts, steps

    parts = map_chunks(run, stream, n_samples, threads, first_chunk=first_chunk)
    return np.vstack([q[0] for q in parts]), np.concatenate([q[1] for q in parts])


def _guarded_mean(values_of_chunk, stream: RngStream, n_samples: int, threads, guard: bool) -> McEstimate:
    def run(gen, count, _):
        return RunningMoments.of(values_of_chunk(gen, count))

    moments = merge_all(map_chunks(run, stream, n_samples, threads))
    flagged = False
    if guard and moments.kurtosis_spread > KURTOSIS_LIMIT:
        flagged = True
        log.warning("heavy-tailed sample (variance spread %.2f); doubling samples once",
                    moments.kurtosis_spread)
        first = len(chunk_sizes(n_samples))
        extra = merge_all(map_chunks(run, stream, n_samples, threads, first_chunk=first))
        moments = moments.merge(extra)
    return McEstimate(moments.mean, moments.std_error, moments.count, stream.seed, flagged)


def harmonic_measure(domain: Domain, idx: StableIndex, x, phi, n_samples: int, rng,
                     shrink: float = DEFAULT_SHRINK, max_steps: int = DEFAULT_MAX_STEPS,
                     threads: int | None = None, guard: bool = True) -> McEstimate:
    """Monte Carlo estimate of ``E_x[phi(X_{tau_D})]``.

    ``phi`` maps an ``(m, n)`` array of exterior points to ``m`` values.
    """
    if not domain.contains(np.asarray(x, dtype=float)):
        raise ValidationError("x must lie in the open domain")
    x = np.asarray(x, dtype=float)

    def values(gen, count):
        pts, _, _ = wos_batch(domain, idx, np.broadcast_to(x, (count, domain.n)), shrink, gen, max_steps)
        return np.asarray(phi(pts), dtype=float)

    return _guarded_mean(values, as_stream(rng), n_samples, threads, guard)


def mean_value_residual_X(ball: Ball, idx: StableIndex, f, n_samples: int, rng, *, growth: float = 0.0,
                          truncation: float | None = None, threads: int | None = None,
                          guard: bool = True) -> McEstimate:
    """Estimate ``E_x[f(X_{tau_B})] - f(x)`` for ``B = B(x, r)``.

    ``growth`` declares ``|f(z)| = O(|z|^growth)`` at infinity.  The mean is
    infinite when ``growth >= alpha`` and the variance when
    ``growth >= alpha / 2``; such inputs need a ``truncation`` radius, beyond
    which ``f`` is replaced by zero.
    """
    if growth >= idx.alpha / 2 and truncation is None:
        raise ValidationError(
            f"f grows like |z|^{growth}: the Monte Carlo mean has infinite variance for "
            f"alpha = {idx.alpha}; declare a truncation radius"
        )
    x = ball.center
    fx = float(np.asarray(f(x[None, :]), dtype=float)[0])

    def values(gen, count):
        z = x + ball.radius * unit_exit_offsets(idx, gen, count)
        v = np.asarray(f(z), dtype=float)
        if truncation is not None:
            v = np.where(np.linalg.norm(z - x, axis=1) <= truncation, v, 0.0)
        return v - fx

    return _guarded_mean(values, as_stream(rng), n_samples, threads, guard)


def mean_value_residual_XD(domain: Domain, ball: Ball, idx: StableIndex, h, n_samples: int, rng, *,
                           threads: int | None = None, guard: bool = True) -> McEstimate:
    """Estimate ``E_x[h(X_{tau_B}); X_{tau_B} in D] - h(x)`` for ``B = B(x, r)`` with closure in D.

    Exits landing outside D contribute zero, which realises the killing.
    """
    x = ball.center
    if float(domain.dist_to_boundary(x)) <= ball.radius:
        raise ValidationError("the closed ball must lie inside the domain")
    hx = float(np.asarray(h(x[None, :]), dtype=float)[0])

    def values(gen, count):
        z = x + ball.radius * unit_exit_offsets(idx, gen, count)
        inside = domain.contains(z)
        v = np.zeros(count)
        if inside.any():
            v[inside] = np.asarray(h(z[inside]), dtype=float)
        return v - hx

    return _guarded_mean(values, as_stream(rng), n_samples, threads, guard)
