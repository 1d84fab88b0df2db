import numpy as np
import pytest

from stablepot import kernels, quad, representation as rep
from stablepot.errors import NotHarmonic, ValidationError
from stablepot.geometry import Ball, BoundaryMesh, StableIndex
from stablepot.rng import RngStream


def exterior_bump(z):
    # bounded exterior data, smooth away from the sphere
    z = np.atleast_2d(z)
    return np.exp(-np.sum((z - [1.5, 0.0]) ** 2, axis=1))


def synthetic(idx, disc, a=2.0, z0=(0.0, 1.0)):
    z0 = np.asarray(z0)

    def f(p):
        p = np.atleast_2d(p)
        inside = disc.contains(p)
        out = exterior_bump(p).astype(float)
        if inside.any():
            ext = [rep.harmonic_extension(disc, idx, exterior_bump, x, level=3) for x in p[inside]]
            out[inside] = np.array(ext) + a * kernels.martin_ball(idx, disc, p[inside], z0)
        return out

    return f


class TestMeasure:
    def test_validation(self, disc):
        mesh = disc.boundary_mesh(4)
        with pytest.raises(ValidationError):
            rep.DiscreteBoundaryMeasure(mesh, [1.0, 2.0])
        with pytest.raises(ValidationError):
            rep.DiscreteBoundaryMeasure(mesh, [1.0, -1.0, 0.0, 0.0])

    def test_surface(self, disc):
        mu = rep.DiscreteBoundaryMeasure.surface(disc.boundary_mesh(16))
        assert mu.total_mass == pytest.approx(2 * np.pi)


class TestHarmonicExtension:
    def test_constant(self, disc, idx21):
        v = rep.harmonic_extension(disc, idx21, lambda z: np.ones(len(z)), [0.3, 0.4])
        assert v == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("a", [0.5, 1.5])
    def test_reproduces_whole_space_harmonic(self, a):
        # G(., y0) with y0 outside is X-harmonic in D.  The exterior rule sees G chi, with chi
        # a smooth cutoff vanishing near y0; the rest G (1 - chi) lives on B(y0, 1) and is
        # integrated against the Poisson kernel with a pole at y0.
        idx = StableIndex(3, a)
        ball = Ball([0.0, 0.0, 0.0], 1.0)
        y0 = np.array([0.0, 0.0, 3.0])
        x = np.array([0.2, 0.1, 0.3])

        def chi(z):
            t = np.clip((np.linalg.norm(z - y0, axis=-1) - 0.5) / 0.5, 0.0, 1.0)
            return t**3 * (10 - 15 * t + 6 * t**2)

        far = rep.harmonic_extension(ball, idx, lambda z: kernels.green_whole(idx, z, y0) * chi(z), x, level=4)
        near = quad.integrate_interior(
            Ball(y0, 1.0),
            lambda z: kernels.poisson_ball(idx, ball, x, z) * kernels.green_whole(idx, z, y0) * (1 - chi(z)),
            singular_at=y0, singular_exponent=3 - a, level=4).value
        assert far + near == pytest.approx(kernels.green_whole(idx, x, y0), rel=1e-4)

    def test_mc_agrees_with_quadrature(self, disc, idx21):
        x = [0.2, -0.1]
        a = rep.harmonic_extension(disc, idx21, exterior_bump, x)
        b = rep.harmonic_extension(disc, idx21, exterior_bump, x, "mc", n_samples=50_000, rng=RngStream(1))
        assert abs(b.z_score(a)) < 4

    def test_growth_limits(self, disc, idx21):
        with pytest.raises(ValidationError):
            rep.harmonic_extension(disc, idx21, exterior_bump, [0.0, 0.0], growth=1.0)
        with pytest.raises(ValidationError, match="infinite variance"):
            rep.harmonic_extension(disc, idx21, exterior_bump, [0.0, 0.0], "mc", growth=0.6)
        with pytest.raises(ValidationError):
            rep.harmonic_extension(disc, idx21, exterior_bump, [0.0, 0.0], "spline")


class TestPoissonFromGreen:
    @pytest.mark.parametrize("n,a", [(2, 1.0), (2, 0.5), (3, 1.5)])
    def test_matches_closed_form(self, n, a):
        idx = StableIndex(n, a)
        ball = Ball([0.0] * n, 1.0)
        x = np.array([0.3] + [-0.2] * (n - 1))
        z = np.array([0.0] * (n - 1) + [1.7])
        v = rep.poisson_from_green(ball, idx, x, z)
        assert v == pytest.approx(kernels.poisson_ball(idx, ball, x, z), rel=0.02)

    def test_z_must_be_exterior(self, disc, idx21):
        with pytest.raises(ValidationError):
            rep.poisson_from_green(disc, idx21, [0.0, 0.0], [1.0, 0.0])


class TestDecompose:
    def test_damped_nnls(self, gen):
        A = gen.random((30, 6))
        x = np.array([0.0, 1.0, 0.0, 2.0, 0.5, 0.0])
        out = rep.damped_nnls(A, A @ x)
        assert np.all(out >= 0) and np.allclose(out, x, atol=1e-5)

    def test_probe_layout(self, disc):
        mesh = disc.boundary_mesh(8)
        probes = rep.probe_points(disc, mesh)
        assert probes.shape == (16, 2)
        assert np.allclose(np.sort(np.unique(np.round(np.linalg.norm(probes, axis=1), 12))), [0.4, 0.7])

    def test_round_trip(self, disc, idx21):
        mesh = disc.boundary_mesh(8)
        probes = rep.probe_points(disc, mesh, depths=(0.3, 0.5, 0.7))
        dec = rep.decompose(disc, idx21, synthetic(idx21, disc), probes, mesh)
        mu = dec.martin_measure.weights
        j = int(np.argmin(np.linalg.norm(mesh.nodes - [0.0, 1.0], axis=1)))
        assert mu.sum() == pytest.approx(2.0, rel=0.05)
        assert (mu.sum() - mu[j]) / mu.sum() < 0.05
        x = np.array([[0.1, 0.2]])
        assert dec.reconstruct(x)[0] == pytest.approx(synthetic(idx21, disc)(x)[0], rel=1e-3)

    def test_pure_extension_has_no_boundary_mass(self, disc, idx21):
        mesh = disc.boundary_mesh(8)
        probes = rep.probe_points(disc, mesh)
        dec = rep.decompose(disc, idx21, synthetic(idx21, disc, a=0.0), probes, mesh)
        assert dec.martin_measure.total_mass < 0.01 * 2.0

    def test_interior_charge(self, disc, idx21):
        mesh = disc.boundary_mesh(6)
        probes = rep.probe_points(disc, mesh, depths=(0.2, 0.35, 0.5, 0.65, 0.8))
        ynodes = rep.interior_charge_nodes(disc, 6)
        y0 = ynodes[2]
        f = lambda p: np.where(disc.contains(np.atleast_2d(p)),
                               kernels.green_ball(idx21, disc, np.atleast_2d(p), y0, strict=False), 0.0)
        dec = rep.decompose(disc, idx21, f, probes, mesh, allow_interior_charge=True, interior_nodes=ynodes)
        nu = dec.interior_charge
        assert nu[2] == pytest.approx(1.0, rel=0.05)
        assert (nu.sum() - nu[2]) < 0.05 * nu[2]

    def test_negative_singular_part_rejected(self, disc, idx21):
        mesh = disc.boundary_mesh(8)
        with pytest.raises(NotHarmonic):
            rep.decompose(disc, idx21, synthetic(idx21, disc, a=-1.0), rep.probe_points(disc, mesh), mesh)

    def test_needs_enough_probes(self, disc, idx21):
        mesh = disc.boundary_mesh(8)
        with pytest.raises(ValidationError):
            rep.decompose(disc, idx21, exterior_bump, np.zeros((8, 2)), mesh)


class TestIdentifiability:
    def test_positive_for_distinct_nodes(self, disc, idx21):
        nodes = np.array([[1.5, 0.0], [0.0, 1.5], [-1.5, 0.0], [0.0, -2.0]])
        probes = rep.probe_points(disc, disc.boundary_mesh(4))
        assert rep.exterior_identifiability(disc, idx21, nodes, np.ones(4), probes) > 0

    def test_duplicates_are_not_injective(self, disc, idx21):
        nodes = np.array([[1.5, 0.0], [1.5, 0.0]])
        probes = rep.probe_points(disc, disc.boundary_mesh(4))
        assert rep.exterior_identifiability(disc, idx21, nodes, np.ones(2), probes) == 0.0
