"""Shared fixtures and independent oracles used across the test suite."""

from __future__ import annotations

import numpy as np

from mvavatar.camera import Camera, look_at_camera
from mvavatar.mesh import TriMesh


def brute_force_closest(mesh: TriMesh, query: np.ndarray):
    """Exhaustive closest-point scan, independent of the BVH implementation.

    For every triangle the candidates are the in-plane projection (when its
    barycentrics are nonnegative) and the three clamped edge projections; the
    global minimum over all candidates is exact.
    """
    query = np.asarray(query, dtype=float)
    tv = mesh.triangle_vertices()
    a, b, c = tv[:, 0], tv[:, 1], tv[:, 2]
    candidates = []

    # plane projection with barycentric inside test
    n = np.cross(b - a, c - a)
    nn = np.einsum("ij,ij->i", n, n)
    t = np.einsum("ij,ij->i", query - a, n) / nn
    proj = query - t[:, None] * n
    # barycentric coordinates of proj
    v0 = b - a
    v1 = c - a
    v2 = proj - a
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    denom = d00 * d11 - d01 * d01
    bv = (d11 * d20 - d01 * d21) / denom
    bw = (d00 * d21 - d01 * d20) / denom
    bu = 1.0 - bv - bw
    inside = (bu >= 0) & (bv >= 0) & (bw >= 0)
    dist_plane = np.where(inside, np.linalg.norm(query - proj, axis=1), np.inf)
    candidates.append((dist_plane, proj))

    for p0, p1 in ((a, b), (b, c), (c, a)):
        seg = p1 - p0
        tt = np.clip(
            np.einsum("ij,ij->i", query - p0, seg) / np.einsum("ij,ij->i", seg, seg),
            0.0,
            1.0,
        )
        pt = p0 + tt[:, None] * seg
        candidates.append((np.linalg.norm(query - pt, axis=1), pt))

    dists = np.stack([d for d, _ in candidates])
    points = np.stack([p for _, p in candidates])
    per_tri = dists.min(axis=0)
    dmin = per_tri.min()
    # near-exact ties (footpoint on a shared edge) resolve to the lowest
    # triangle index, matching the BVH convention
    tri = int(np.nonzero(per_tri <= dmin * (1.0 + 1e-12))[0][0])
    which = int(np.argmin(dists[:, tri]))
    return points[which, tri], float(dists[which, tri]), tri


def random_triangle_soup(rng: np.random.Generator, n_triangles: int, scale: float = 1.0) -> TriMesh:
    """Independent random triangles with guaranteed non-degenerate area."""
    tris = []
    verts = []
    while len(tris) < n_triangles:
        tv = rng.normal(size=(3, 3)) * scale
        area = 0.5 * np.linalg.norm(np.cross(tv[1] - tv[0], tv[2] - tv[0]))
        if area < 1e-4 * scale * scale:
            continue
        base = 3 * len(tris)
        verts.extend(tv)
        tris.append([base, base + 1, base + 2])
    return TriMesh(np.array(verts), np.array(tris))


def icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), subdivisions: int = 3) -> TriMesh:
    """Subdivided icosahedron projected to a sphere; closed and watertight."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    for _ in range(subdivisions):
        edge_mid = {}
        new_faces = []
        verts_list = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = verts_list[i] + verts_list[j]
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m)
            return edge_mid[key]

        for f in faces:
            a, b, c = f
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces)
    verts = verts * radius + np.asarray(center, dtype=float)
    return TriMesh(verts, faces)


def simple_camera(width=128, height=128, fx=None, distance=2.0, direction=(0.0, 0.0, -1.0),
                  target=(0.0, 0.0, 0.0)) -> Camera:
    """Camera on `direction` side of target, looking at it, world-up roll."""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    position = np.asarray(target, dtype=float) + distance * direction
    if fx is None:
        fx = width * 0.8
    return look_at_camera(position, target, fx, fx, width, height)


def ray_cast_hits(mesh: TriMesh, cam: Camera) -> np.ndarray:
    """Silhouette oracle: per-pixel ray / triangle intersection (Moller-Trumbore)."""
    h, w = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    dirs_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1
    ).reshape(-1, 3)
    dirs = dirs_cam @ cam.rotation  # camera -> world
    origin = cam.center
    tv = mesh.triangle_vertices()
    hit = np.zeros(len(dirs), dtype=bool)
    for a, b, c in tv:
        e1 = b - a
        e2 = c - a
        p = np.cross(dirs, e2)
        det = p @ e1
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = origin - a
        u = (p @ s) * inv
        q = np.cross(s, e1)
        v = (dirs @ q) * inv
        t = (q @ e2) * inv
        hit |= ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
    return hit.reshape(h, w)
