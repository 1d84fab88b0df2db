import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from stablepot import kernels, martin, quad
from stablepot.errors import RecurrentRegime, ValidationError
from stablepot.geometry import Ball, StableIndex
from stablepot.rng import RngStream

alphas = st.floats(0.1, 1.9)
dims = st.sampled_from([1, 2, 3])


def rand_interior(n, u, scale=0.95):
    v = np.asarray(u, dtype=float)[:n]
    r = np.linalg.norm(v)
    return v if r < scale else v * scale / (r + 1e-12) * 0.99


# Frozen values computed to 30 digits with mpmath from the one-dimensional
# integral representation of the ball Green function (substituted integrand
# and hypergeometric form agree to all printed digits).
GREEN_ORACLE = [
    (2, 1.0, [0.0, 0.0], [0.5, 0.0], 0.212206590789193781025178351163),
    (3, 1.5, [0.2, 0.1, 0.0], [-0.3, 0.4, 0.1], 0.0894782332659257470503746222872),
    (1, 1.5, [0.3], [-0.4], 0.292450281520899992064018805595),
    (1, 0.5, [0.3], [-0.4], 0.25854782481609865687522207037),
    (2, 0.3, [0.1, 0.2], [-0.5, 0.3], 0.0982880184519586384467030219856),
]

# Exit-time and Poisson values from the Gamma-function closed forms in mpmath.
EXIT_ORACLE = [
    (2, 1.0, [0.0, 0.0], 0.63661977236758134307553505349),
    (3, 0.5, [0.5, 0.0, 0.0], 0.700050090539109319184960215904),
]
POISSON_ORACLE = [
    (2, 1.0, [0.5, 0.0], [0.0, 1.6], 0.0250012813381571338753318708525),
    (3, 1.5, [0.0, 0.0, 0.0], [2.0, 0.0, 0.0], 0.00196437470474032701069643097666),
]


class TestGreenWhole:
    def test_n2_alpha1_unit_distance(self):
        assert kernels.green_whole(StableIndex(2, 1.0), [0, 0], [1, 0]) == pytest.approx(1 / (2 * math.pi), rel=1e-15)

    def test_diagonal_is_infinite(self):
        assert kernels.green_whole(StableIndex(2, 1.0), [0.3, 0.1], [0.3, 0.1]) == np.inf

    def test_recurrent_regime_rejected(self):
        with pytest.raises(RecurrentRegime):
            kernels.green_whole(StableIndex(1, 1.5), [0.0], [1.0])

    @given(dims, alphas, st.floats(0.1, 10))
    def test_power_law(self, n, a, r):
        idx = StableIndex(n, a)
        if not idx.transient:
            return
        x = np.zeros(n)
        y = np.zeros(n)
        y[0] = r
        assert kernels.green_whole(idx, x, y) == pytest.approx(kernels.constants(idx).green_const * r ** (a - n))


class TestGreenBall:
    @pytest.mark.parametrize("n,a,x,y,ref", GREEN_ORACLE)
    def test_frozen_values(self, n, a, x, y, ref):
        ball = Ball(np.zeros(n), 1.0)
        assert kernels.green_ball(StableIndex(n, a), ball, x, y) == pytest.approx(ref, rel=1e-12)

    @pytest.mark.parametrize("n,a,x,y,ref", GREEN_ORACLE)
    def test_quadrature_route(self, n, a, x, y, ref):
        ball = Ball(np.zeros(n), 1.0)
        assert kernels.green_ball(StableIndex(n, a), ball, x, y, method="quad") == pytest.approx(ref, rel=1e-9)

    def test_unknown_method(self, disc, idx21):
        with pytest.raises(ValidationError):
            kernels.green_ball(idx21, disc, [0, 0], [0.5, 0], method="simpson")

    def test_monte_carlo_cross_check(self, disc, idx21):
        # G_B = G - E_x[G(X_tau, .)] estimated by exit sampling
        est = martin.green_mc(disc, idx21, [0.0, 0.0], [0.5, 0.0], 100_000, RngStream(5, (1,)))
        assert abs(est.value - GREEN_ORACLE[0][4]) / GREEN_ORACLE[0][4] < 0.01

    def test_zero_on_boundary(self, disc, idx21):
        assert kernels.green_ball(idx21, disc, [1.0, 0.0], [0.2, 0.0]) == 0.0
        assert kernels.green_ball(idx21, disc, [0.2, 0.0], [0.0, 1.0]) == 0.0

    def test_diagonal(self, disc):
        assert kernels.green_ball(StableIndex(2, 1.0), disc, [0.1, 0], [0.1, 0]) == np.inf
        g = kernels.green_ball(StableIndex(1, 1.5), Ball([0.0], 1.0), [0.2], [0.2])
        # off-diagonal values approach the limit at rate |x - y|^(alpha - n)
        near = kernels.green_ball(StableIndex(1, 1.5), Ball([0.0], 1.0), [0.2], [0.2 + 1e-12])
        assert np.isfinite(g) and g == pytest.approx(near, rel=1e-5)

    def test_decays_along_approach_sequence(self, disc, idx21):
        seq = disc.approach_sequence([0.0, 1.0], 0.5, 20)
        g = kernels.green_ball(idx21, disc, seq, np.array([0.2, -0.1]))
        assert np.all(np.diff(g) < 0)
        ref = kernels.green_ball(idx21, disc, [0.0, 0.0], [0.2, -0.1])
        assert g[-1] < 1e-3 * ref

    @given(dims, alphas, st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    def test_symmetry(self, n, a, u):
        ball = Ball(np.zeros(n), 1.0)
        x, y = rand_interior(n, u[:3]), rand_interior(n, u[3:])
        if np.linalg.norm(x - y) < 1e-3:
            return
        idx = StableIndex(n, a)
        g1 = kernels.green_ball(idx, ball, x, y)
        g2 = kernels.green_ball(idx, ball, y, x)
        assert g1 == pytest.approx(g2, rel=1e-12)
        assert g1 > 0

    @given(dims, alphas, st.floats(0.2, 5.0), st.lists(st.floats(-1, 1), min_size=6, max_size=6))
    def test_scaling(self, n, a, r, u):
        x, y = rand_interior(n, u[:3]), rand_interior(n, u[3:])
        if np.linalg.norm(x - y) < 1e-3:
            return
        idx = StableIndex(n, a)
        g1 = kernels.green_ball(idx, Ball(np.zeros(n), 1.0), x, y)
        g2 = kernels.green_ball(idx, Ball(np.zeros(n), r), r * x, r * y)
        assert g2 == pytest.approx(r ** (a - n) * g1, rel=1e-10)

    @given(alphas, st.lists(st.floats(-1, 1), min_size=4, max_size=4))
    def test_dominated_by_whole_space(self, a, u):
        ball = Ball([0.0, 0.0, 0.0], 1.0)
        x, y = rand_interior(3, u[:2] + [0.1]), rand_interior(3, u[2:] + [-0.1])
        idx = StableIndex(3, a)
        assert kernels.green_ball(idx, ball, x, y) <= kernels.green_whole(idx, x, y) * (1 + 1e-12)


class TestPoissonBall:
    @pytest.mark.parametrize("n,a,x,z,ref", POISSON_ORACLE)
    def test_frozen_values(self, n, a, x, z, ref):
        ball = Ball(np.zeros(n), 1.0)
        assert kernels.poisson_ball(StableIndex(n, a), ball, x, z) == pytest.approx(ref, rel=1e-13)

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("a", [0.5, 1.0, 1.5])
    @pytest.mark.parametrize("r", [0.0, 0.5])
    def test_normalisation(self, n, a, r):
        idx, ball = StableIndex(n, a), Ball(np.zeros(n), 1.0)
        x = np.zeros(n)
        x[0] = r
        f = lambda z: kernels.poisson_ball(idx, ball, x, z, strict=False)
        res = quad.integrate_exterior_tail(ball, f, n + a, boundary_exponent=a / 2)
        assert abs(res.value - 1) < 1e-3

    @given(alphas, st.floats(1.05, 5.0), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
    def test_rotation_invariance_at_centre(self, a, r, t1, t2):
        idx, ball = StableIndex(2, a), Ball([0.0, 0.0], 1.0)
        k1 = kernels.poisson_ball(idx, ball, [0, 0], [r * np.cos(t1), r * np.sin(t1)])
        k2 = kernels.poisson_ball(idx, ball, [0, 0], [r * np.cos(t2), r * np.sin(t2)])
        assert k1 == pytest.approx(k2, rel=1e-12)

    @pytest.mark.parametrize("a", [0.5, 1.0, 1.5])
    def test_two_sided_estimate(self, a):
        # K(x,z) is comparable to delta(x)^(a/2) / (delta(z)^(a/2) (1+delta(z))^(a/2) |x-z|^n)
        idx, ball = StableIndex(2, a), Ball([0.0, 0.0], 1.0)
        g = np.linspace(-0.95, 0.95, 9)
        xs = np.array([[u, v] for u in g for v in g if u * u + v * v < 0.95])
        zs = np.array([[r * np.cos(t), r * np.sin(t)] for r in (1.01, 1.2, 2.0, 10.0) for t in np.linspace(0, 6, 7)])
        X, Z = xs[:, None, :], zs[None, :, :]
        k = kernels.poisson_ball(idx, ball, X, Z)
        dx = 1 - np.linalg.norm(X, axis=-1)
        dz = np.linalg.norm(Z, axis=-1) - 1
        bound = dx ** (a / 2) / (dz ** (a / 2) * (1 + dz) ** (a / 2) * np.linalg.norm(X - Z, axis=-1) ** 2)
        ratio = k / bound
        c = kernels.constants(idx).poisson_const
        assert ratio.min() >= c * 2 ** (-a / 2) * (1 - 1e-12)
        assert ratio.max() <= c * 2 ** (a / 2) * (1 + 1e-12)

    def test_rejects_bad_arguments(self, disc, idx21):
        with pytest.raises(ValidationError):
            kernels.poisson_ball(idx21, disc, [0, 0], [0.5, 0])
        with pytest.raises(ValidationError):
            kernels.poisson_ball(idx21, disc, [1.0, 0], [2.0, 0])


class TestMartinBall:
    def test_centre_is_one(self, disc, idx21):
        assert kernels.martin_ball(idx21, disc, [0.0, 0.0], [1.0, 0.0]) == 1.0

    def test_arithmetic_example(self, disc, idx21):
        assert kernels.martin_ball(idx21, disc, [0.5, 0.0], [1.0, 0.0]) == pytest.approx(2 * math.sqrt(3), rel=1e-15)

    @given(dims, alphas, st.floats(0.1, 5.0), st.floats(0, 2 * np.pi))
    def test_normalised_at_centre(self, n, a, r, t):
        ball = Ball(np.ones(n), r)
        w = np.zeros(n)
        w[0] = np.cos(t)
        if n > 1:
            w[1] = np.sin(t)
        w = np.ones(n) + r * w / np.linalg.norm(w)
        assert kernels.martin_ball(StableIndex(n, a), ball, ball.center, w) == pytest.approx(1.0, abs=1e-12)

    @given(alphas, st.lists(st.floats(-1, 1), min_size=2, max_size=2))
    def test_ratio_limit_of_green(self, a, u):
        # M(x,z) = lim G(x,y)/G(0,y) as y -> z
        idx, ball = StableIndex(2, a), Ball([0.0, 0.0], 1.0)
        x = rand_interior(2, u, 0.8)
        z = np.array([0.0, 1.0])
        if np.linalg.norm(x - z) < 0.1:
            return
        y = np.array([0.0, 1.0 - 1e-6])
        r = kernels.green_ball(idx, ball, x, y) / kernels.green_ball(idx, ball, [0, 0], y)
        assert r == pytest.approx(kernels.martin_ball(idx, ball, x, z), rel=1e-4)

    def test_pole_must_be_on_sphere(self, disc, idx21):
        with pytest.raises(ValidationError):
            kernels.martin_ball(idx21, disc, [0, 0], [0.5, 0])

    def test_envelope(self, disc):
        for a in (0.5, 1.0, 1.5):
            idx = StableIndex(2, a)
            c = kernels.martin_envelope_const(idx, disc)
            t = np.linspace(0, 2 * np.pi, 50)
            xs = np.stack([0.9 * np.cos(t), 0.9 * np.sin(t)], 1)
            m = kernels.martin_ball(idx, disc, xs, [1.0, 0.0])
            d = np.linalg.norm(xs - [1.0, 0.0], axis=1)
            assert np.all(m <= c * d ** (a / 2 - 2))


class TestExitTime:
    @pytest.mark.parametrize("n,a,x,ref", EXIT_ORACLE)
    def test_frozen_values(self, n, a, x, ref):
        ball = Ball(np.zeros(n), 1.0)
        assert kernels.mean_exit_time_ball(StableIndex(n, a), ball, x) == pytest.approx(ref, rel=1e-14)

    def test_quadrature_route_at_centre(self, disc, idx21):
        v = kernels.mean_exit_time_ball(idx21, disc, [0.0, 0.0], method="quadrature")
        assert v == pytest.approx(2 / math.pi, rel=1e-6)

    def test_scaling_exponent(self, disc, idx21):
        r = np.linspace(0.0, 0.9, 7)
        xs = np.stack([r, 0 * r], 1)
        v = kernels.mean_exit_time_ball(idx21, disc, xs, method="quadrature")
        slope = np.polyfit(np.log(1 - r**2), np.log(v), 1)[0]
        assert abs(slope - 0.5) < 1e-3

    def test_radius_scaling(self):
        idx = StableIndex(3, 1.2)
        a = kernels.mean_exit_time_ball(idx, Ball([0, 0, 0], 1.0), [0.1, 0.2, 0.3])
        b = kernels.mean_exit_time_ball(idx, Ball([0, 0, 0], 3.0), [0.3, 0.6, 0.9])
        assert b == pytest.approx(3**1.2 * a, rel=1e-13)

    def test_unknown_method(self, disc, idx21):
        with pytest.raises(ValidationError):
            kernels.mean_exit_time_ball(idx21, disc, [0, 0], method="guess")


class TestRadialExitCdf:
    @pytest.mark.parametrize("n,a", [(1, 0.5), (2, 1.0), (3, 1.5)])
    def test_matches_beta_law(self, n, a):
        # |Z|^-2 ~ Beta(a/2, 1 - a/2) for the exit point from the unit ball centre
        t = np.array([1.0, 1.01, 1.3, 2.0, 5.0, 40.0])
        ref = stats.beta(a / 2, 1 - a / 2).sf(t**-2.0)
        assert np.allclose(kernels.radial_exit_cdf(StableIndex(n, a), t), ref, atol=1e-9)

    def test_monotone(self):
        t = np.linspace(0.5, 20, 50)
        c = kernels.radial_exit_cdf(StableIndex(2, 1.3), t)
        assert np.all(np.diff(c) >= -1e-15) and c[0] == 0.0 and c[-1] < 1.0


def test_constants_match_gamma_formulae():
    idx = StableIndex(2, 1.0)
    c = kernels.constants(idx)
    assert c.green_const == pytest.approx(special.gamma(0.5) / (2 * math.pi * special.gamma(0.5)))
    assert c.exit_time_const == pytest.approx(2 / math.pi)
