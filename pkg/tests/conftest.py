import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import icosphere  # noqa: E402

from mvavatar.mesh import TriMesh  # noqa: E402


def axis_aligned_sphere(radius, center, subdivisions, toward=(0.0, 0.0, -1.0)):
    """Icosphere rotated so one triangle's flat normal is exactly `toward`.

    The ray from `center` along -`toward` then crosses that triangle near its
    centroid, which makes flat-shaded center-pixel normals exact.
    """
    sphere = icosphere(1.0, (0, 0, 0), subdivisions)
    normals = sphere.triangle_normals()
    centroids = sphere.triangle_vertices().mean(axis=1)
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    toward = np.asarray(toward, dtype=float)
    toward /= np.linalg.norm(toward)
    best = int(np.argmax(centroids @ toward + normals @ toward))
    n = normals[best]
    v = np.cross(n, toward)
    c = float(n @ toward)
    if np.linalg.norm(v) < 1e-12:
        rot = np.eye(3) if c > 0 else -np.eye(3)
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        rot = np.eye(3) + vx + vx @ vx / (1.0 + c)
    verts = sphere.vertices @ rot.T * radius + np.asarray(center, dtype=float)
    return TriMesh(verts, sphere.triangles)


@pytest.fixture(scope="session")
def unit_sphere_fine():
    """Unit sphere at (0,0,2), front triangle aligned with a +z-looking camera."""
    return axis_aligned_sphere(1.0, (0.0, 0.0, 2.0), subdivisions=5)


@pytest.fixture(scope="session")
def unit_sphere_coarse():
    return icosphere(1.0, (0.0, 0.0, 0.0), subdivisions=3)
