"""Fast invariant suite behind the ``check`` command.

Each check returns a :class:`CheckResult` with the measured quantity and
the threshold it was held to; the suite runs in well under a minute.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import conditioned, kernels, martin, quad, representation, sampler, schrodinger
from .errors import ValidationError
from .geometry import Ball, Box, StableIndex
from .rng import RngStream


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _result(name, value, threshold, detail="", smaller=True):
    ok = value <= threshold if smaller else value >= threshold
    return CheckResult(name, bool(ok), float(value), float(threshold), detail)


def check_poisson_normalization(seed):
    idx, ball = StableIndex(2, 1.0), Ball([0.0, 0.0], 1.0)
    x = np.array([0.5, 0.0])
    f = lambda z: kernels.poisson_ball(idx, ball, x, z, strict=False)
    res = quad.integrate_exterior_tail(ball, f, idx.n + idx.alpha, boundary_exponent=idx.alpha / 2)
    return _result("poisson_normalization", abs(res.value - 1), 1e-3, "int K_B(x, .) over the exterior")


def check_green_symmetry(seed):
    idx, ball = StableIndex(2, 1.5), Ball([0.0, 0.0], 1.0)
    gen = np.random.default_rng(seed)
    x, y, _ = martin.random_triples(ball, 200, gen)
    a = kernels.green_ball(idx, ball, x, y)
    b = kernels.green_ball(idx, ball, y, x)
    return _result("green_symmetry", float(np.max(np.abs(a - b) / np.abs(a))), 1e-12)


def check_martin_normalization(seed):
    idx, ball = StableIndex(3, 0.7), Ball([0.0, 0.0, 0.0], 2.0)
    z = 2.0 * np.array([0.6, 0.0, 0.8])
    return _result("martin_normalization", abs(kernels.martin_ball(idx, ball, ball.center, z) - 1), 1e-14)


def check_exit_time_routes(seed):
    idx, ball = StableIndex(2, 1.0), Ball([0.0, 0.0], 1.0)
    x = [0.3, -0.2]
    a = kernels.mean_exit_time_ball(idx, ball, x)
    b = kernels.mean_exit_time_ball(idx, ball, x, method="quadrature")
    return _result("exit_time_routes", abs(a - b) / a, 1e-6)


def check_sampler_radius(seed):
    idx = StableIndex(2, 1.0)
    gen = RngStream(seed, (11,)).generator(0)
    z = sampler.unit_exit_offsets(idx, gen, 20_000)
    u = np.linalg.norm(z, axis=1) ** -2.0
    p = stats.kstest(u, stats.beta(idx.alpha / 2, 1 - idx.alpha / 2).cdf).pvalue
    return _result("sampler_radius", p, 1e-3, "KS p-value of |Z|^-2 against Beta(a/2, 1 - a/2)",
                   smaller=False)


def check_boundary_non_hitting(seed):
    idx, box = StableIndex(2, 0.5), Box([0.0, 0.0], [1.0, 1.0])
    pts, _ = sampler.exit_points(box, idx, [0.5, 0.5], 20_000, RngStream(seed, (12,)))
    d = np.abs(box.dist_to_boundary(pts))
    return _result("boundary_non_hitting", int(np.sum(d <= 1e-12)), 0, "exit points within 1e-12")


def check_killed_harmonicity(seed):
    idx, ball = StableIndex(1, 1.5), Ball([0.0], 1.0)
    z = np.array([1.0])
    h = lambda p: kernels.martin_ball(idx, ball, p, z, strict=False)
    est = sampler.mean_value_residual_XD(ball, Ball([0.2], 0.3), idx, h, 100_000, RngStream(seed, (13,)))
    return _result("killed_harmonicity", abs(est.z_score()), 4.0, "|z-score|")


def check_green_mc(seed):
    idx, ball = StableIndex(2, 1.5), Ball([0.0, 0.0], 1.0)
    x, y = np.array([0.3, 0.0]), np.array([-0.2, 0.3])
    est = martin.green_mc(ball, idx, x, y, 20_000, RngStream(seed, (14,)))
    ref = kernels.green_ball(idx, ball, x, y)
    return _result("green_mc", abs(est.value - ref) / ref, 0.05)


def check_three_g_dilation(seed):
    idx = StableIndex(2, 1.0)
    gen = np.random.default_rng(seed)
    b1, b2 = Ball([0.0, 0.0], 1.0), Ball([0.0, 0.0], 3.0)
    x, y, z = martin.random_triples(b1, 500, gen)
    l1, r1 = martin.three_g_ratio(b1, idx, x, y, z)
    l2, r2 = martin.three_g_ratio(b2, idx, 3 * x, 3 * y, 3 * z)
    return _result("three_g_dilation", float(np.max(np.abs(l2 / r2 - l1 / r1) / (l1 / r1))), 1e-12)


def check_gauge_zero(seed):
    idx, ball = StableIndex(2, 1.0), Ball([0.0, 0.0], 1.0)
    op = quad.green_operator(ball, idx, 3, use_cache=False)
    g = schrodinger.gauge(ball, idx, schrodinger.constant_potential(0.0), op)
    cg = schrodinger.conditional_gauge(ball, idx, schrodinger.constant_potential(0.0), op, [0.2, 0.1], [0.0, 1.0])
    return _result("gauge_zero", float(max(np.max(np.abs(g.values - 1)), abs(cg - 1))), 0.0)


def check_conditioned_confinement(seed):
    idx, ball = StableIndex(2, 1.0), Ball([0.0, 0.0], 1.0)
    h = conditioned.martin_pole(ball, idx, [0.0, 1.0])
    paths = conditioned.simulate_conditioned_paths(ball, idx, [0.0, 0.0], h, 200, RngStream(seed, (15,)),
                                                   record=True)
    outside = sum(int(np.sum(~ball.contains(q.points))) for q in paths)
    return _result("conditioned_confinement", outside, 0, "recorded points outside D")


def check_poisson_from_green(seed):
    idx, ball = StableIndex(2, 1.0), Ball([0.0, 0.0], 1.0)
    x, z = np.array([0.2, -0.3]), np.array([0.0, 1.6])
    v = representation.poisson_from_green(ball, idx, x, z)
    ref = kernels.poisson_ball(idx, ball, x, z)
    return _result("poisson_from_green", abs(v - ref) / ref, 0.02)


def check_lifetime_dilation(seed):
    idx = StableIndex(2, 1.0)
    b1, b2 = Ball([0.0, 0.0], 1.0), Ball([0.0, 0.0], 2.0)
    x, z = np.array([0.3, 0.2]), np.array([0.0, 1.0])
    a = conditioned.conditional_lifetime(b1, idx, x, z, level=3)
    b = conditioned.conditional_lifetime(b2, idx, 2 * x, 2 * z, level=3)
    return _result("lifetime_dilation", abs(b / (2**idx.alpha * a) - 1), 0.01)


def check_thread_invariance(seed):
    idx, box = StableIndex(2, 1.0), Box([0.0, 0.0], [1.0, 1.0])
    phi = lambda z: z[:, 0]
    a = sampler.harmonic_measure(box, idx, [0.3, 0.6], phi, 30_000, RngStream(seed, (16,)), threads=1)
    b = sampler.harmonic_measure(box, idx, [0.3, 0.6], phi, 30_000, RngStream(seed, (16,)), threads=4)
    same = a.value == b.value and a.std_error == b.std_error
    return _result("thread_invariance", 0 if same else 1, 0)


CHECKS = [
    check_poisson_normalization,
    check_green_symmetry,
    check_martin_normalization,
    check_exit_time_routes,
    check_sampler_radius,
    check_boundary_non_hitting,
    check_killed_harmonicity,
    check_green_mc,
    check_three_g_dilation,
    check_gauge_zero,
    check_conditioned_confinement,
    check_poisson_from_green,
    check_lifetime_dilation,
    check_thread_invariance,
]


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    """Run the suite (or the named subset) and return one result per invariant."""
    known = {fn.__name__.removeprefix("check_") for fn in CHECKS}
    unknown = sorted(set(names or ()) - known)
    if unknown:
        raise ValidationError(f"unknown check names {unknown}; available: {sorted(known)}")
    out = []
    for fn in CHECKS:
        name = fn.__name__.removeprefix("check_")
        if names and name not in names:
            continue
        try:
            out.append(fn(seed))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(name, False, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"))
    return out
