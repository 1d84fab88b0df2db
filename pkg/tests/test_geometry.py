import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stablepot.errors import DimensionMismatch, ValidationError
from stablepot.geometry import Ball, Box, Polytope, StableIndex, domain_from_dict, domain_from_json

alphas = st.floats(0.05, 1.95)
unit_vecs = st.lists(st.floats(-1, 1), min_size=2, max_size=2).filter(lambda v: np.hypot(*v) > 1e-3)


def triangle():
    return domain_from_dict({"type": "polytope", "halfspaces": [
        {"a": [-1, 0], "b": 0}, {"a": [0, -1], "b": 0}, {"a": [1, 1], "b": 1}]})


class TestStableIndex:
    @pytest.mark.parametrize("alpha", [0.0, 2.0, -1.0, 2.5])
    def test_alpha_outside_open_interval(self, alpha):
        with pytest.raises(ValidationError, match="open interval"):
            StableIndex(2, alpha)

    def test_dimension_must_be_positive(self):
        with pytest.raises(ValidationError):
            StableIndex(0, 1.0)

    def test_transience(self):
        assert StableIndex(2, 1.5).transient
        assert not StableIndex(1, 1.0).transient
        assert not StableIndex(1, 1.5).transient


class TestContains:
    def test_examples(self, disc, square):
        assert disc.contains([0.0, 0.0])
        assert not disc.contains([1.0, 0.0])
        assert not square.contains([0.5, 2.0])

    def test_vectorised(self, disc):
        out = disc.contains(np.array([[0.0, 0.0], [0.9, 0.0], [1.1, 0.0]]))
        assert out.tolist() == [True, True, False]

    def test_dimension_mismatch(self, disc):
        with pytest.raises(DimensionMismatch):
            disc.contains([0.0, 0.0, 0.0])


class TestDistance:
    def test_examples(self, disc, square):
        assert disc.dist_to_boundary([0.0, 0.0]) == 1.0
        assert disc.dist_to_boundary([2.0, 0.0]) == -1.0
        assert square.dist_to_boundary([0.25, 0.5]) == pytest.approx(0.25)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_box_distance_is_nearest_face(self, x, y):
        box = Box([0.0, 0.0], [1.0, 1.0])
        d = box.dist_to_boundary([x, y])
        assert d == pytest.approx(min(x, y, 1 - x, 1 - y), abs=1e-12)

    @given(st.floats(0.01, 0.98), st.floats(0.01, 0.98))
    def test_polytope_distance_matches_box(self, x, y):
        box = Box([0.0, 0.0], [1.0, 1.0])
        poly = Polytope(*box.halfspaces())
        assert poly.dist_to_boundary([x, y]) == pytest.approx(box.dist_to_boundary([x, y]), abs=1e-12)


class TestInscribedBall:
    def test_examples(self, disc, square):
        b = disc.inscribed_ball([0.0, 0.0])
        assert np.allclose(b.center, 0.0) and b.radius == 1.0
        assert disc.inscribed_ball([0.5, 0.0]).radius == pytest.approx(0.5)
        assert square.inscribed_ball([0.5, 0.5], 0.5).radius == pytest.approx(0.25)

    @given(st.floats(-0.95, 0.95), st.floats(0.05, 1.0))
    def test_inscribed_ball_stays_inside(self, t, shrink):
        disc = Ball([0.0, 0.0], 1.0)
        p = np.array([t, 0.3 * t])
        if not disc.contains(p):
            return
        b = disc.inscribed_ball(p, shrink)
        assert np.linalg.norm(b.center) + b.radius <= 1.0 + 1e-12

    def test_rejects_exterior_points(self, disc):
        with pytest.raises(ValidationError):
            disc.inscribed_ball([1.5, 0.0])


class TestBoundaryMesh:
    def test_circle_resolution_8(self, disc):
        m = disc.boundary_mesh(8)
        angles = np.sort(np.mod(np.arctan2(m.nodes[:, 1], m.nodes[:, 0]), 2 * np.pi))
        assert np.allclose(np.diff(angles), 2 * np.pi / 8)
        assert np.allclose(m.patch_areas, 2 * np.pi / 8)

    @pytest.mark.parametrize("res", [4, 8, 16])
    def test_sphere_area(self, res):
        m = Ball([0.0, 0.0, 0.0], 1.0).boundary_mesh(res)
        assert m.patch_areas.sum() == pytest.approx(4 * np.pi, rel=1e-2)
        assert np.allclose(np.linalg.norm(m.nodes, axis=1), 1.0)

    @pytest.mark.parametrize("res", [4, 10])
    def test_box_perimeter(self, square, res):
        m = square.boundary_mesh(res)
        assert m.patch_areas.sum() == pytest.approx(4.0)
        assert np.all(square.on_boundary(m.nodes))

    def test_polytope_mesh_on_boundary(self):
        tri = triangle()
        m = tri.boundary_mesh(12)
        assert m.patch_areas.sum() == pytest.approx(2 + np.sqrt(2))
        assert np.all(tri.on_boundary(m.nodes))

    def test_ball_mesh_on_scaled_sphere(self):
        b = Ball([1.0, -1.0], 2.0)
        m = b.boundary_mesh(12)
        assert np.allclose(np.linalg.norm(m.nodes - b.center, axis=1), 2.0)
        assert m.patch_areas.sum() == pytest.approx(4 * np.pi)


class TestApproachSequence:
    def test_ball_radial(self, disc):
        seq = disc.approach_sequence([1.0, 0.0], 0.5, 3)
        assert np.allclose(seq, [[0.5, 0.0], [0.75, 0.0], [0.875, 0.0]])

    def test_square_edge_goes_straight_up(self, square):
        seq = square.approach_sequence([0.5, 0.0], 0.2, 4)
        assert np.allclose(seq[:, 0], 0.5)
        assert np.all(np.diff(seq[:, 1]) < 0)

    def test_square_corner_diagonal(self, square):
        seq = square.approach_sequence([0.0, 0.0], 0.1, 5)
        assert np.allclose(seq[:, 0], seq[:, 1])
        assert np.all(square.contains(seq))

    def test_rejects_interior_pole(self, disc):
        with pytest.raises(ValidationError):
            disc.approach_sequence([0.2, 0.0], 0.1, 3)

    @given(unit_vecs)
    def test_ball_sequence_interior_and_converging(self, v):
        disc = Ball([0.0, 0.0], 1.0)
        z = np.asarray(v) / np.linalg.norm(v)
        seq = disc.approach_sequence(z, 0.5, 8)
        assert np.all(disc.contains(seq))
        d = np.linalg.norm(seq - z, axis=1)
        assert np.allclose(d[1:] / d[:-1], 0.5)


class TestRayExit:
    def test_ball(self, disc):
        t = disc.ray_exit([0.5, 0.0], np.array([[1.0, 0.0], [-1.0, 0.0]]))
        assert np.allclose(t, [0.5, 1.5])

    @given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0, 2 * np.pi))
    def test_box_exit_lands_on_boundary(self, x, y, theta):
        box = Box([0.0, 0.0], [1.0, 1.0])
        u = np.array([[np.cos(theta), np.sin(theta)]])
        t = box.ray_exit([x, y], u)
        assert box.on_boundary(np.array([x, y]) + t[0] * u[0])


class TestSerialisation:
    @pytest.mark.parametrize("dom", [Ball([0.5, 0.0], 2.0), Box([0, 0, 0], [1, 2, 3]), "triangle"])
    def test_round_trip(self, dom):
        dom = triangle() if dom == "triangle" else dom
        back = domain_from_json(json.dumps(dom.to_dict()))
        assert back.to_dict() == dom.to_dict()
        assert back.key() == dom.key()

    def test_bad_specs(self):
        with pytest.raises(ValidationError):
            domain_from_dict({"type": "torus"})
        with pytest.raises(ValidationError):
            domain_from_dict({"type": "ball", "center": [0, 0], "radius": -1})
        with pytest.raises(ValidationError):
            domain_from_dict({"type": "box", "min": [0, 0], "max": [1, 0]})

    def test_unbounded_polytope_rejected(self):
        with pytest.raises(ValidationError):
            domain_from_dict({"type": "polytope", "halfspaces": [{"a": [-1, 0], "b": 0}, {"a": [0, -1], "b": 0}]})

    def test_polytope_volume(self):
        assert triangle().volume == pytest.approx(0.5)
