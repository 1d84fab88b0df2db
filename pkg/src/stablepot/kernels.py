"""Closed-form kernels of the symmetric alpha-stable process.

Whole-space Green function (Riesz kernel), and on a ball ``B(c, r)`` the
Green function, Poisson kernel, Martin kernel and mean exit time.  Every ball
kernel is evaluated in ball-centred, radius-normalised coordinates and
rescaled afterwards.

All functions broadcast over leading point dimensions: ``x`` and ``y`` may be
single points ``(n,)`` or batches ``(m, n)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import RecurrentRegime, ValidationError
from .geometry import Ball, StableIndex, unit_sphere_area

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class KernelConstants:
    green_const: float
    poisson_const: float
    levy_const: float
    ball_green_const: float
    exit_time_const: float


@functools.lru_cache(maxsize=None)
def _constants(n: int, alpha: float) -> KernelConstants:
    a = alpha
    if n > a:
        green = 2.0**-a * math.pi ** (-n / 2) * math.gamma((n - a) / 2) / math.gamma(a / 2)
    else:
        green = math.nan
    poisson = math.gamma(n / 2) * math.pi ** (-(n / 2 + 1)) * math.sin(math.pi * a / 2)
    levy = a * 2.0 ** (a - 1) * math.gamma((n + a) / 2) / (math.pi ** (n / 2) * math.gamma(1 - a / 2))
    ball_green = math.gamma(n / 2) / (2.0**a * math.pi ** (n / 2) * math.gamma(a / 2) ** 2)
    exit_time = math.gamma(n / 2) / (2.0**a * math.gamma(1 + a / 2) * math.gamma((n + a) / 2))
    return KernelConstants(green, poisson, levy, ball_green, exit_time)


def constants(idx: StableIndex) -> KernelConstants:
    """Kernel constants for ``idx`` (cached per ``(n, alpha)``)."""
    return _constants(idx.n, idx.alpha)


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return x, y, np.linalg.norm(x - y, axis=-1)


def green_whole(idx: StableIndex, x, y):
    """Riesz kernel ``c |x - y|^(alpha - n)``; ``inf`` on the diagonal."""
    if not idx.transient:
        raise RecurrentRegime(
            f"the whole-space Green function needs n > alpha (got n={idx.n}, alpha={idx.alpha})"
        )
    _, _, d = _pair(x, y)
    with np.errstate(divide="ignore"):
        return constants(idx).green_const * d ** (idx.alpha - idx.n)


def incomplete_green_integral(n: int, alpha: float, w):
    """``int_0^w s^(alpha/2 - 1) (1 + s)^(-n/2) ds`` via the Gauss hypergeometric function."""
    w = np.asarray(w, dtype=float)
    a = alpha / 2
    with np.errstate(invalid="ignore", over="ignore"):
        return w**a / a * special.hyp2f1(n / 2, a, a + 1, -w)


def _incomplete_green_integral_quad(n: int, alpha: float, w: float) -> float:
    # s = u^(2/alpha) removes the s^(alpha/2-1) endpoint singularity
    if w <= 0:
        return 0.0
    a = alpha / 2
    f = lambda u: (1.0 / a) * (1.0 + u ** (1.0 / a)) ** (-n / 2)
    top = w**a
    pieces = [0.0, min(top, 1.0)]
    if top > 1.0:
        pieces += list(np.geomspace(1.0, top, int(np.ceil(np.log10(top))) + 2)[1:])
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return total


def _check_inside(rho2, what, strict):
    if strict and np.any(rho2 > (1 + _EDGE_TOL) ** 2):
        raise ValidationError(f"{what} lies outside the closed ball")


def green_ball(idx: StableIndex, ball: Ball, x, y, *, strict: bool = True, method: str = "hyp2f1"):
    """Green function of the killed process on ``ball``.

    Zero when either argument is on or outside the sphere (``strict=False``
    allows exterior arguments, which is how the killed kernel extends).
    ``method="quad"`` evaluates the one-dimensional integral by adaptive
    quadrature instead of the hypergeometric closed form.
    """
    if method not in ("hyp2f1", "quad"):
        raise ValidationError(f"unknown method {method!r}")
    n, a = idx.n, idx.alpha
    xs = ball.to_unit(x)
    ys = ball.to_unit(y)
    rx2 = np.sum(xs * xs, axis=-1)
    ry2 = np.sum(ys * ys, axis=-1)
    _check_inside(rx2, "x", strict)
    _check_inside(ry2, "y", strict)
    d = np.linalg.norm(xs - ys, axis=-1)
    px = np.maximum(1 - rx2, 0.0)
    py = np.maximum(1 - ry2, 0.0)
    num = px * py
    scale = constants(idx).ball_green_const * ball.radius ** (a - n)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = num / (d * d)
        if method == "quad":
            integral = np.vectorize(lambda t: _incomplete_green_integral_quad(n, a, t))(w)
        else:
            integral = incomplete_green_integral(n, a, w)
        g = scale * d ** (a - n) * integral
    g = np.where(num > 0, g, 0.0)
    diag = (d == 0) & (num > 0)
    if np.any(diag):
        if n > a:
            g = np.where(diag, np.inf, g)
        elif n < a:
            # d^(a-n) I(w) -> (2/(a-n)) num^((a-n)/2) as d -> 0
            lim = scale * 2.0 / (a - n) * num ** ((a - n) / 2)
            g = np.where(diag, lim, g)
        else:
            g = np.where(diag, np.inf, g)
    return g if np.ndim(g) else float(g)


def poisson_ball(idx: StableIndex, ball: Ball, x, z, *, strict: bool = True):
    """Density at exterior point ``z`` of the exit position from ``ball`` started at ``x``."""
    n, a = idx.n, idx.alpha
    xs = ball.to_unit(x)
    zs = ball.to_unit(z)
    rx2 = np.sum(xs * xs, axis=-1)
    rz2 = np.sum(zs * zs, axis=-1)
    if strict:
        if np.any(rx2 >= 1):
            raise ValidationError("x must lie in the open ball")
        if np.any(rz2 <= 1):
            raise ValidationError("z must lie strictly outside the closed ball")
    d = np.linalg.norm(xs - zs, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = constants(idx).poisson_const * (
            np.maximum(1 - rx2, 0.0) / (rz2 - 1)
        ) ** (a / 2) * d ** (-n)
    k = np.where((rz2 > 1) & (rx2 < 1), k, 0.0) / ball.radius**n
    return k if np.ndim(k) else float(k)


def martin_ball(idx: StableIndex, ball: Ball, x, w, *, strict: bool = True):
    """Martin kernel of ``ball`` with reference point at the centre.

    In unit coordinates this is ``(1 - |x|^2)^(alpha/2) / |x - w|^n``; for a
    general radius the value is dimensionless, so ``martin_ball(center, w) = 1``
    for every pole ``w``.  Zero for ``x`` outside the ball.
    """
    n, a = idx.n, idx.alpha
    xs = ball.to_unit(x)
    ws = ball.to_unit(w)
    rw = np.linalg.norm(ws, axis=-1)
    if np.any(np.abs(rw - 1) > 1e-8):
        raise ValidationError("Martin pole must lie on the sphere")
    rx2 = np.sum(xs * xs, axis=-1)
    _check_inside(rx2, "x", strict)
    d = np.linalg.norm(xs - ws, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.maximum(1 - rx2, 0.0) ** (a / 2) / d**n
    m = np.where(rx2 < 1, m, 0.0)
    return m if np.ndim(m) else float(m)


def martin_envelope_const(idx: StableIndex, ball: Ball) -> float:
    """``C`` with ``martin_ball(x, w) <= C |x - w|^(alpha/2 - n)`` in unit coordinates.

    Uses ``1 - |x|^2 <= 2 (1 - |x|) <= 2 |x - w|``.
    """
    return 2.0 ** (idx.alpha / 2)


def mean_exit_time_ball(idx: StableIndex, ball: Ball, x, *, method: str = "closed_form"):
    """Expected exit time ``E_x[tau_B]``.

    ``method="quadrature"`` integrates :func:`green_ball` over the ball;
    ``"closed_form"`` uses ``c (r^2 - |x - c|^2)^(alpha/2)``.
    """
    x = np.asarray(x, dtype=float)
    if method == "quadrature":
        from .quad import integrate_interior

        pts = np.atleast_2d(x)
        out = np.array([
            integrate_interior(
                ball, lambda y, p=p: green_ball(idx, ball, p, y, strict=False),
                singular_at=p, singular_exponent=max(idx.n - idx.alpha, 0.0),
            ).value
            for p in pts
        ])
        return out if x.ndim == 2 else float(out[0])
    if method != "closed_form":
        raise ValidationError(f"unknown method {method!r}")
    xs = ball.to_unit(x)
    rx2 = np.sum(xs * xs, axis=-1)
    if np.any(rx2 >= 1):
        raise ValidationError("x must lie in the open ball")
    t = constants(idx).exit_time_const * ball.radius**idx.alpha * (1 - rx2) ** (idx.alpha / 2)
    return t if np.ndim(t) else float(t)


def radial_exit_cdf(idx: StableIndex, t):
    """``P(|X_tau| / r <= t)`` for the exit from a ball started at its centre.

    Computed by quadrature of :func:`poisson_ball`'s radial profile, independent
    of the sampler's closed-form radial law.
    """
    n, a = idx.n, idx.alpha
    c = constants(idx).poisson_const * unit_sphere_area(n)

    def dens(rho):
        return c * (rho * rho - 1) ** (-a / 2) / rho

    # rho = 1 + v^p removes the (rho-1)^(-a/2) endpoint singularity:
    # (rho^2 - 1)^(-a/2) p v^(p-1) = p (2 + v^p)^(-a/2)
    p = 2 / (2 - a)
    g = lambda v: c * p * (2 + v**p) ** (-a / 2) / (1 + v**p)

    def one(tt):
        if tt <= 1:
            return 0.0
        head = integrate.quad(g, 0, (min(tt, 2.0) - 1) ** (1 / p), epsabs=1e-14, epsrel=1e-12)[0]
        if tt <= 2:
            return head
        cuts = np.geomspace(2.0, tt, max(2, int(np.log2(tt)) + 2))
        return head + sum(
            integrate.quad(dens, lo, hi, epsabs=1e-14, epsrel=1e-12)[0]
            for lo, hi in zip(cuts[:-1], cuts[1:])
        )

    return np.vectorize(one)(np.asarray(t, dtype=float))
