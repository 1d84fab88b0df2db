"""Computational domains and the geometric queries the rest of the package uses.

Three shapes are supported: balls, axis-aligned boxes and bounded convex
polytopes given by halfspaces ``a . x <= b``.  All queries accept either a
single point of shape ``(n,)`` or a batch of shape ``(m, n)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, spatial

from .errors import DimensionMismatch, ValidationError

#: Points within this distance of the boundary count as boundary points.
BOUNDARY_TOL = 1e-9
#: Tolerance used in polytope face tests.
FACE_TOL = 1e-12


@dataclass(frozen=True)
class StableIndex:
    """Dimension ``n`` and stability index ``alpha`` of the process."""

    n: int
    alpha: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"dimension n must be an integer >= 1, got {self.n!r}")
        a = float(self.alpha)
        if not (0.0 < a < 2.0):
            raise ValidationError(
                f"alpha must lie in the open interval (0, 2), got {self.alpha!r}"
            )
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "alpha", a)

    @property
    def transient(self) -> bool:
        return self.n > self.alpha


def as_points(p, n: int | None = None) -> np.ndarray:
    """Return ``p`` as a float array of shape ``(m, n)``."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a point or a batch of points, got shape {arr.shape}")
    if n is not None and arr.shape[1] != n:
        raise DimensionMismatch(f"point has dimension {arr.shape[1]}, domain has dimension {n}")
    return arr


def _squeeze(values: np.ndarray, single: bool):
    return values[0] if single else values


def unit_sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def ball_volume(n: int, r: float = 1.0) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


@dataclass(frozen=True)
class BoundaryMesh:
    """Nodes on the boundary with positive surface weights."""

    nodes: np.ndarray
    patch_areas: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def nearest(self, points) -> np.ndarray:
        """Index of the nearest node for each point."""
        pts = as_points(points)
        d2 = ((pts[:, None, :] - self.nodes[None, :, :]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)


class Domain:
    """Base class for bounded open domains."""

    n: int
    lipschitz: tuple | None = None

    # -- queries implemented by subclasses ---------------------------------
    def dist_to_boundary(self, p):
        """Signed distance: positive inside, negative outside, zero on the boundary."""
        raise NotImplementedError

    def ray_exit(self, p, directions) -> np.ndarray:
        """Length of the segment from ``p`` along each unit direction until it leaves D.

        ``p`` must lie in the closure of D; directions pointing out of D from
        a boundary point give 0.
        """
        raise NotImplementedError

    def inward_direction(self, z) -> np.ndarray:
        raise NotImplementedError

    def boundary_mesh(self, resolution: int) -> BoundaryMesh:
        raise NotImplementedError

    @property
    def center(self) -> np.ndarray:
        """Chebyshev center (deepest interior point)."""
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        raise NotImplementedError

    @property
    def volume(self) -> float:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    # -- shared behaviour ---------------------------------------------------
    def interior_distance(self, p) -> np.ndarray:
        """Vectorised distance to the boundary for a batch of points.

        Exact inside the domain; outside it is only guaranteed to be
        nonpositive.  Used by walk-on-spheres, which never needs exterior
        distances.
        """
        return np.atleast_1d(self.dist_to_boundary(as_points(p, self.n)))

    def contains(self, p):
        """True iff ``p`` lies in the open interior."""
        d = self.dist_to_boundary(p)
        return d > 0

    def on_boundary(self, z, tol: float = BOUNDARY_TOL):
        return np.abs(self.dist_to_boundary(z)) <= tol * max(1.0, self.diameter)

    def inscribed_ball(self, p, shrink: float = 1.0) -> "Ball":
        if not (0.0 < shrink <= 1.0):
            raise ValidationError(f"shrink must lie in (0, 1], got {shrink}")
        p = np.asarray(p, dtype=float)
        d = float(self.dist_to_boundary(p))
        if d <= 0:
            raise ValidationError(f"point {p.tolist()} is not interior to the domain")
        return Ball(p, shrink * d)

    def approach_sequence(self, z, t0: float, count: int) -> np.ndarray:
        """Points ``z + t0 2^-k u``, k = 0..count-1, with ``u`` the inward direction."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise DimensionMismatch(f"boundary point must have shape ({self.n},)")
        if not self.on_boundary(z):
            raise ValidationError(f"{z.tolist()} is not on the boundary")
        if not (0 < t0 < self.inradius):
            raise ValidationError(f"t0 = {t0} must lie in (0, inradius = {self.inradius})")
        u = self.inward_direction(z)
        t = t0 * 0.5 ** np.arange(count)
        pts = z[None, :] + t[:, None] * u[None, :]
        inside = np.atleast_1d(self.contains(pts))
        if not inside.all():
            k = int(np.flatnonzero(~inside)[0])
            raise ValidationError(
                f"approach sequence leaves the domain at level {k}; shrink t0"
            )
        return pts

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def key(self) -> str:
        """Stable hash used for cache keys."""
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError(f"{type(self).__name__} has no halfspace description")


@dataclass(frozen=True, eq=False)
class Ball(Domain):
    center_: np.ndarray
    radius: float
    lipschitz: tuple | None = None

    def __init__(self, center, radius, lipschitz=None):
        c = np.asarray(center, dtype=float).reshape(-1)
        if not radius > 0:
            raise ValidationError(f"radius must be positive, got {radius}")
        object.__setattr__(self, "center_", c)
        object.__setattr__(self, "radius", float(radius))
        object.__setattr__(self, "lipschitz", lipschitz)

    def __repr__(self):
        return f"Ball(center={self.center_.tolist()}, radius={self.radius})"

    def __eq__(self, other):
        return (
            isinstance(other, Ball)
            and self.radius == other.radius
            and np.array_equal(self.center_, other.center_)
        )

    def __hash__(self):
        return hash((self.radius, self.center_.tobytes()))

    @property
    def n(self) -> int:
        return self.center_.size

    @property
    def center(self):
        return self.center_

    @property
    def inradius(self):
        return self.radius

    @property
    def volume(self):
        return ball_volume(self.n, self.radius)

    @property
    def surface_area(self):
        return unit_sphere_area(self.n) * self.radius ** (self.n - 1)

    @property
    def diameter(self):
        return 2 * self.radius

    def dist_to_boundary(self, p):
        single = np.ndim(p) == 1
        pts = as_points(p, self.n)
        d = self.radius - np.linalg.norm(pts - self.center_, axis=1)
        return _squeeze(d, single)

    def ray_exit(self, p, directions):
        p = np.asarray(p, dtype=float)
        dirs = as_points(directions, self.n)
        q = p - self.center_
        b = dirs @ q
        c = q @ q - self.radius**2
        disc = np.maximum(b * b - c, 0.0)
        return np.maximum(-b + np.sqrt(disc), 0.0)

    def inward_direction(self, z):
        u = self.center_ - np.asarray(z, dtype=float)
        return u / np.linalg.norm(u)

    def boundary_mesh(self, resolution: int) -> BoundaryMesh:
        if resolution < 4 and self.n > 1:
            raise ValidationError("boundary mesh resolution must be >= 4")
        n, r, c = self.n, self.radius, self.center_
        if n == 1:
            nodes = np.array([[c[0] - r], [c[0] + r]])
            return BoundaryMesh(nodes, np.ones(2))
        if n == 2:
            theta = 2 * np.pi * np.arange(resolution) / resolution
            nodes = c + r * np.column_stack([np.cos(theta), np.sin(theta)])
            return BoundaryMesh(nodes, np.full(resolution, 2 * np.pi * r / resolution))
        if n == 3:
            # Fibonacci lattice: equal-area patches by construction
            k = np.arange(resolution) + 0.5
            cos_t = 1 - 2 * k / resolution
            phi = np.pi * (1 + 5**0.5) * k
            sin_t = np.sqrt(1 - cos_t**2)
            dirs = np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
            return BoundaryMesh(c + r * dirs, np.full(resolution, 4 * np.pi * r**2 / resolution))
        raise ValidationError("boundary meshes are available for n <= 3")

    def to_dict(self):
        return {"type": "ball", "center": self.center_.tolist(), "radius": self.radius}

    def to_unit(self, p) -> np.ndarray:
        """Ball-centred, radius-normalised coordinates."""
        return (np.asarray(p, dtype=float) - self.center_) / self.radius


#: Record type for a ball; balls double as domains.
BallSpec = Ball


class Polytope(Domain):
    """Bounded convex polytope ``{x : A x < b}``."""

    def __init__(self, A, b, lipschitz=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValidationError("halfspace normals and offsets have different lengths")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ValidationError("halfspace with zero normal")
        # rows already of unit length are kept bit-exact so serialisation round-trips
        norms = np.where(np.abs(norms - 1) <= 4 * np.finfo(float).eps, 1.0, norms)
        self.A = A / norms[:, None]
        self.b = b / norms
        self.lipschitz = lipschitz
        self._center, self._inradius = self._chebyshev()
        if self._inradius <= 0:
            raise ValidationError("polytope has empty interior")
        self._vertices = None

    def _chebyshev(self):
        n = self.A.shape[1]
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, np.ones((len(self.b), 1))])
        res = optimize.linprog(c, A_ub=A_ub, b_ub=self.b, bounds=[(None, None)] * n + [(0, None)])
        if res.status == 3:
            raise ValidationError("polytope is unbounded")
        if not res.success:
            raise ValidationError(f"could not locate polytope interior: {res.message}")
        return res.x[:n], float(res.x[-1])

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def center(self):
        return self._center

    @property
    def inradius(self):
        return self._inradius

    def halfspaces(self):
        return self.A, self.b

    def vertices(self) -> np.ndarray:
        if self._vertices is None:
            if self.n == 1:
                a = self.A[:, 0]
                lo = np.max(-self.b[a < 0])
                hi = np.min(self.b[a > 0])
                self._vertices = np.array([[lo], [hi]])
            else:
                hs = spatial.HalfspaceIntersection(np.hstack([self.A, -self.b[:, None]]), self._center)
                self._vertices = np.unique(np.round(hs.intersections, 13), axis=0)
        return self._vertices

    @property
    def volume(self):
        if self.n == 1:
            v = self.vertices()
            return float(v[1, 0] - v[0, 0])
        return float(spatial.ConvexHull(self.vertices()).volume)

    @property
    def diameter(self):
        v = self.vertices()
        return float(spatial.distance.pdist(v).max())

    def dist_to_boundary(self, p):
        single = np.ndim(p) == 1
        pts = as_points(p, self.n)
        slack = self.b[None, :] - pts @ self.A.T
        d = slack.min(axis=1)
        outside = d < 0
        if np.any(outside):
            d = d.copy()
            d[outside] = -self._exterior_distance(pts[outside])
        return _squeeze(d, single)

    def interior_distance(self, p):
        pts = as_points(p, self.n)
        return (self.b[None, :] - pts @ self.A.T).min(axis=1)

    def _exterior_distance(self, pts):
        out = np.empty(len(pts))
        if self.n == 1:
            v = self.vertices()[:, 0]
            return np.maximum(v[0] - pts[:, 0], pts[:, 0] - v[1])
        if self.n == 2:
            segs = self._edges()
            for i, p in enumerate(pts):
                out[i] = min(_point_segment_distance(p, a, b) for a, b in segs)
            return out
        for i, p in enumerate(pts):
            res = optimize.minimize(
                lambda y: 0.5 * np.sum((y - p) ** 2),
                self._center,
                jac=lambda y: y - p,
                constraints=[{"type": "ineq", "fun": lambda y: self.b - self.A @ y,
                              "jac": lambda y: -self.A}],
                method="SLSQP",
                options={"ftol": 1e-15, "maxiter": 200},
            )
            out[i] = np.linalg.norm(res.x - p)
        return out

    def _edges(self):
        v = self.vertices()
        ang = np.arctan2(v[:, 1] - self._center[1], v[:, 0] - self._center[0])
        v = v[np.argsort(ang)]
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def ray_exit(self, p, directions):
        p = np.asarray(p, dtype=float)
        dirs = as_points(directions, self.n)
        rate = dirs @ self.A.T
        slack = np.maximum(self.b - self.A @ p, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = np.where(rate > FACE_TOL, slack[None, :] / rate, np.inf)
        return np.maximum(t.min(axis=1), 0.0)

    def active_faces(self, z, tol=BOUNDARY_TOL):
        slack = self.b - self.A @ np.asarray(z, dtype=float)
        return np.flatnonzero(np.abs(slack) <= tol * max(1.0, self.diameter))

    def inward_direction(self, z):
        faces = self.active_faces(z)
        if faces.size == 0:
            raise ValidationError(f"{np.asarray(z).tolist()} is not on the boundary")
        u = -self.A[faces].sum(axis=0)
        return u / np.linalg.norm(u)

    def boundary_mesh(self, resolution: int) -> BoundaryMesh:
        if resolution < 4 and self.n > 1:
            raise ValidationError("boundary mesh resolution must be >= 4")
        if self.n == 1:
            return BoundaryMesh(self.vertices().copy(), np.ones(2))
        if self.n == 2:
            nodes, areas = [], []
            for a, b in self._edges():
                s = (np.arange(resolution) + 0.5) / resolution
                nodes.append(a + s[:, None] * (b - a))
                areas.append(np.full(resolution, np.linalg.norm(b - a) / resolution))
            return BoundaryMesh(np.vstack(nodes), np.concatenate(areas))
        if self.n == 3:
            return self._face_mesh_3d(resolution)
        raise ValidationError("boundary meshes are available for n <= 3")

    def _face_mesh_3d(self, m):
        v = self.vertices()
        nodes, areas = [], []
        for k in range(len(self.b)):
            on = np.abs(v @ self.A[k] - self.b[k]) <= 1e-9 * max(1.0, self.diameter)
            fv = v[on]
            if len(fv) < 3:
                continue
            c = fv.mean(axis=0)
            e1 = fv[0] - c
            e1 /= np.linalg.norm(e1)
            e2 = np.cross(self.A[k], e1)
            ang = np.arctan2((fv - c) @ e2, (fv - c) @ e1)
            fv = fv[np.argsort(ang)]
            for i in range(len(fv)):
                tri = (c, fv[i], fv[(i + 1) % len(fv)])
                pts, w = _subdivide_triangle(*tri, m)
                nodes.append(pts)
                areas.append(w)
        return BoundaryMesh(np.vstack(nodes), np.concatenate(areas))

    def to_dict(self):
        return {
            "type": "polytope",
            "halfspaces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.A, self.b)],
        }


class Box(Polytope):
    """Axis-aligned box ``prod (lo_i, hi_i)``."""

    def __init__(self, lo, hi, lipschitz=None):
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValidationError("box needs min < max componentwise")
        self.lo, self.hi = lo, hi
        n = lo.size
        eye = np.eye(n)
        super().__init__(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), lipschitz)

    def _chebyshev(self):
        return 0.5 * (self.lo + self.hi), float(0.5 * (self.hi - self.lo).min())

    def vertices(self):
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float)

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def dist_to_boundary(self, p):
        single = np.ndim(p) == 1
        pts = as_points(p, self.n)
        inner = np.minimum(pts - self.lo, self.hi - pts).min(axis=1)
        excess = np.maximum(np.maximum(self.lo - pts, pts - self.hi), 0.0)
        outer = np.linalg.norm(excess, axis=1)
        d = np.where(outer > 0, -outer, inner)
        return _squeeze(d, single)

    def boundary_mesh(self, resolution: int) -> BoundaryMesh:
        if resolution < 4 and self.n > 1:
            raise ValidationError("boundary mesh resolution must be >= 4")
        n = self.n
        if n == 1:
            return BoundaryMesh(np.array([self.lo, self.hi]), np.ones(2))
        nodes, areas = [], []
        s = (np.arange(resolution) + 0.5) / resolution
        for axis in range(n):
            others = [j for j in range(n) if j != axis]
            grids = np.meshgrid(*[self.lo[j] + s * (self.hi[j] - self.lo[j]) for j in others],
                                indexing="ij")
            cell = np.prod([(self.hi[j] - self.lo[j]) / resolution for j in others])
            for val in (self.lo[axis], self.hi[axis]):
                pts = np.empty((grids[0].size, n))
                pts[:, axis] = val
                for j, g in zip(others, grids):
                    pts[:, j] = g.ravel()
                nodes.append(pts)
                areas.append(np.full(len(pts), cell))
        return BoundaryMesh(np.vstack(nodes), np.concatenate(areas))

    def to_dict(self):
        return {"type": "box", "min": self.lo.tolist(), "max": self.hi.tolist()}


def _point_segment_distance(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _subdivide_triangle(a, b, c, m):
    """Centroids and areas of the m^2 congruent sub-triangles of (a, b, c)."""
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a)) / m**2
    pts = []
    e1, e2 = (b - a) / m, (c - a) / m
    for i in range(m):
        for j in range(m - i):
            p0 = a + i * e1 + j * e2
            pts.append(p0 + (e1 + e2) / 3)
            if i + j < m - 1:
                pts.append(p0 + 2 * (e1 + e2) / 3)
    return np.array(pts), np.full(len(pts), area)


def domain_from_dict(spec: dict) -> Domain:
    """Build a domain from its JSON description."""
    kind = spec.get("type")
    if kind == "ball":
        return Ball(spec["center"], spec["radius"])
    if kind == "box":
        return Box(spec["min"], spec["max"])
    if kind == "polytope":
        hs = spec["halfspaces"]
        return Polytope([h["a"] for h in hs], [h["b"] for h in hs])
    raise ValidationError(f"unknown domain type {kind!r}")


def domain_from_json(text: str) -> Domain:
    return domain_from_dict(json.loads(text))


# functional aliases mirroring the query names used throughout the docs
def contains(domain: Domain, p):
    return domain.contains(p)


def dist_to_boundary(domain: Domain, p):
    return domain.dist_to_boundary(p)


def inscribed_ball(domain: Domain, p, shrink: float = 1.0) -> Ball:
    return domain.inscribed_ball(p, shrink)


def boundary_mesh(domain: Domain, resolution: int) -> BoundaryMesh:
    return domain.boundary_mesh(resolution)


def approach_sequence(domain: Domain, z, t0: float, count: int) -> np.ndarray:
    return domain.approach_sequence(z, t0, count)
