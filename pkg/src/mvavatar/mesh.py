"""Indexed triangle surfaces and spatial queries (closest point, area sampling)."""

from __future__ import annotations

import numpy as np

from .bvh import Bvh
from .exceptions import EmptyInputError

MIN_TRIANGLE_AREA = 1e-12  # m^2; degenerate triangles are rejected at construction
NORMAL_UNIT_TOL = 1e-6


class TriMesh:
    """Immutable indexed triangle mesh.

    Construction validates indices, finiteness, non-degenerate triangles
    (area > 1e-12 m^2), and unit vertex normals when provided.
    """

    def __init__(self, vertices, triangles, vertex_normals=None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise ValueError("vertices contain non-finite coordinates")
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise ValueError("triangle indices out of range")
        if len(triangles):
            areas = _triangle_areas(vertices, triangles)
            if np.any(areas <= MIN_TRIANGLE_AREA):
                bad = int(np.argmax(areas <= MIN_TRIANGLE_AREA))
                raise ValueError(
                    f"degenerate triangle {bad} with area {areas[bad]:.3g} m^2"
                )
        if vertex_normals is not None:
            vertex_normals = np.ascontiguousarray(vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(vertex_normals) != len(vertices):
                raise ValueError("vertex_normals length must match vertices")
            norms = np.linalg.norm(vertex_normals, axis=1)
            if np.any(np.abs(norms - 1.0) > NORMAL_UNIT_TOL):
                raise ValueError("vertex normals must be unit length within 1e-6")
            vertex_normals.flags.writeable = False
        vertices.flags.writeable = False
        triangles.flags.writeable = False
        self.vertices = vertices
        self.triangles = triangles
        self.vertex_normals = vertex_normals
        self._bvh = None
        self._areas = None

    # -- derived geometry ---------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_vertices(self) -> np.ndarray:
        """(m, 3, 3) array of per-triangle corner positions."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        if self._areas is None:
            self._areas = _triangle_areas(self.vertices, self.triangles)
            self._areas.flags.writeable = False
        return self._areas

    def triangle_normals(self) -> np.ndarray:
        """Unit geometric normals, right-hand rule over vertex order."""
        tv = self.triangle_vertices()
        n = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def area_weighted_vertex_normals(self) -> np.ndarray:
        """Per-vertex normals averaged from incident triangles, area weighted."""
        tv = self.triangle_vertices()
        cross = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])  # |cross| = 2*area
        acc = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], cross)
        norms = np.linalg.norm(acc, axis=1, keepdims=True)
        norms[norms < 1e-30] = 1.0
        return acc / norms

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounds()
        return float(np.linalg.norm(hi - lo))

    def total_area(self) -> float:
        return float(self.triangle_areas().sum())

    def flipped(self) -> "TriMesh":
        """Same surface with reversed winding (normals negated)."""
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, rotation=None, translation=None) -> "TriMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=float).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=float)
        return TriMesh(v, self.triangles)

    def bvh(self) -> Bvh:
        if self._bvh is None:
            if self.n_triangles == 0:
                raise EmptyInputError("mesh has no triangles")
            self._bvh = Bvh(self.triangle_vertices())
        return self._bvh

    def __repr__(self):
        return f"TriMesh({self.n_vertices} vertices, {self.n_triangles} triangles)"


class SurfaceSample:
    """A point on a mesh surface with the owning triangle's geometric normal."""

    __slots__ = ("position", "normal", "triangle_index")

    def __init__(self, position, normal, triangle_index):
        self.position = np.asarray(position, dtype=float)
        self.normal = np.asarray(normal, dtype=float)
        self.triangle_index = int(triangle_index)

    def __repr__(self):
        return (
            f"SurfaceSample(pos={self.position.round(6).tolist()}, "
            f"tri={self.triangle_index})"
        )


class SurfaceSamples:
    """Batch of surface samples stored as arrays; indexable to SurfaceSample."""

    __slots__ = ("positions", "normals", "triangle_indices")

    def __init__(self, positions, normals, triangle_indices):
        self.positions = np.asarray(positions, dtype=float)
        self.normals = np.asarray(normals, dtype=float)
        self.triangle_indices = np.asarray(triangle_indices, dtype=np.int64)

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> SurfaceSample:
        return SurfaceSample(self.positions[i], self.normals[i], self.triangle_indices[i])


def closest_point(mesh: TriMesh, query):
    """Globally nearest point on the mesh. Returns (SurfaceSample, distance in m)."""
    if mesh.n_triangles == 0:
        raise EmptyInputError("closest_point on an empty mesh")
    point, sq, tri = mesh.bvh().closest_point(query)
    normal = mesh.triangle_normals()[tri]
    return SurfaceSample(point, normal, tri), float(np.sqrt(sq))


def closest_points(mesh: TriMesh, queries: np.ndarray):
    """Batch closest-point query. Returns (points, distances, triangle indices)."""
    if mesh.n_triangles == 0:
        raise EmptyInputError("closest_points on an empty mesh")
    points, sq, tris = mesh.bvh().closest_points(np.asarray(queries, dtype=np.float64))
    return points, np.sqrt(sq), tris


def sample_surface(mesh: TriMesh, n: int, seed: int) -> SurfaceSamples:
    """Draw n area-proportional samples with a seeded generator.

    Per-sample normals are the owning triangle's geometric normal. The same
    (mesh, n, seed) always produces the identical sample list.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mesh.n_triangles == 0:
        raise EmptyInputError("sample_surface on an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise EmptyInputError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri_idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tv = mesh.triangle_vertices()[tri_idx]
    positions = tv[:, 0] + u[:, None] * (tv[:, 1] - tv[:, 0]) + v[:, None] * (tv[:, 2] - tv[:, 0])
    normals = mesh.triangle_normals()[tri_idx]
    return SurfaceSamples(positions, normals, tri_idx)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    tv = vertices[triangles]
    cross = np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)
