"""Bounding-volume hierarchy for exact closest-point queries on triangle soups.

Median split over the longest centroid axis, leaf size 4. Traversal is jitted;
results are exact (the traversal prunes with box distances only).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

LEAF_SIZE = 4


class Bvh:
    """Flattened BVH over a (m, 3, 3) array of triangle vertices."""

    __slots__ = ("tri_verts", "order", "bbox_min", "bbox_max", "left", "right", "start", "count")

    def __init__(self, tri_verts: np.ndarray):
        tri_verts = np.ascontiguousarray(tri_verts, dtype=np.float64)
        if tri_verts.ndim != 3 or tri_verts.shape[1:] != (3, 3):
            raise ValueError("tri_verts must have shape (m, 3, 3)")
        m = len(tri_verts)
        if m == 0:
            raise ValueError("cannot build a BVH over zero triangles")
        centroids = tri_verts.mean(axis=1)
        tri_min = tri_verts.min(axis=1)
        tri_max = tri_verts.max(axis=1)

        order = np.arange(m, dtype=np.int64)
        # conservative node count for a binary tree with >=LEAF_SIZE/2 leaves
        max_nodes = 4 * m + 2
        bbox_min = np.empty((max_nodes, 3))
        bbox_max = np.empty((max_nodes, 3))
        left = np.full(max_nodes, -1, dtype=np.int64)
        right = np.full(max_nodes, -1, dtype=np.int64)
        start = np.zeros(max_nodes, dtype=np.int64)
        count = np.zeros(max_nodes, dtype=np.int64)

        n_nodes = 1
        stack = [(0, 0, m)]  # (node index, range start, range end)
        while stack:
            node, lo, hi = stack.pop()
            idx = order[lo:hi]
            bbox_min[node] = tri_min[idx].min(axis=0)
            bbox_max[node] = tri_max[idx].max(axis=0)
            if hi - lo <= LEAF_SIZE:
                start[node] = lo
                count[node] = hi - lo
                continue
            cen = centroids[idx]
            axis = int(np.argmax(cen.max(axis=0) - cen.min(axis=0)))
            mid = (hi - lo) // 2
            # argsort (not argpartition) keeps the build order fully deterministic
            local = np.argsort(cen[:, axis], kind="stable")
            order[lo:hi] = idx[local]
            left[node] = n_nodes
            right[node] = n_nodes + 1
            n_nodes += 2
            stack.append((left[node], lo, lo + mid))
            stack.append((right[node], lo + mid, hi))

        self.tri_verts = np.ascontiguousarray(tri_verts[order])
        self.order = order
        self.bbox_min = np.ascontiguousarray(bbox_min[:n_nodes])
        self.bbox_max = np.ascontiguousarray(bbox_max[:n_nodes])
        self.left = left[:n_nodes].copy()
        self.right = right[:n_nodes].copy()
        self.start = start[:n_nodes].copy()
        self.count = count[:n_nodes].copy()

    def closest_point(self, query):
        """Globally nearest surface point: (point (3,), squared distance, triangle index).

        Near-exact distance ties (within 1e-12 relative, e.g. a footpoint on a
        shared edge) resolve to the lowest original triangle index, which makes
        the winning triangle invariant under rigid transforms of the scene.
        """
        point = np.empty(3)
        sq, tri = _closest_point_single(
            self.tri_verts,
            self.order,
            self.bbox_min,
            self.bbox_max,
            self.left,
            self.right,
            self.start,
            self.count,
            np.asarray(query, dtype=np.float64),
            point,
        )
        return point, float(sq), int(tri)

    def closest_points(self, queries: np.ndarray):
        """Batch query: returns (points (n,3), squared distances (n,), triangle indices (n,))."""
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        points = np.empty_like(queries)
        sq = np.empty(len(queries))
        tri = np.empty(len(queries), dtype=np.int64)
        _closest_point_batch(
            self.tri_verts,
            self.order,
            self.bbox_min,
            self.bbox_max,
            self.left,
            self.right,
            self.start,
            self.count,
            queries,
            points,
            sq,
            tri,
        )
        return points, sq, tri


@njit(cache=True, inline="always")
def _box_sq_distance(bmin, bmax, q):
    d = 0.0
    for i in range(3):
        if q[i] < bmin[i]:
            t = bmin[i] - q[i]
            d += t * t
        elif q[i] > bmax[i]:
            t = q[i] - bmax[i]
            d += t * t
    return d


@njit(cache=True)
def closest_point_on_triangle(a, b, c, q, out):
    """Ericson's ClosestPtPointTriangle; writes the point to `out`, returns squared distance."""
    abx = b[0] - a[0]
    aby = b[1] - a[1]
    abz = b[2] - a[2]
    acx = c[0] - a[0]
    acy = c[1] - a[1]
    acz = c[2] - a[2]
    apx = q[0] - a[0]
    apy = q[1] - a[1]
    apz = q[2] - a[2]

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        out[0], out[1], out[2] = a[0], a[1], a[2]
        return apx * apx + apy * apy + apz * apz

    bpx = q[0] - b[0]
    bpy = q[1] - b[1]
    bpz = q[2] - b[2]
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        out[0], out[1], out[2] = b[0], b[1], b[2]
        return bpx * bpx + bpy * bpy + bpz * bpz

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        out[0] = a[0] + v * abx
        out[1] = a[1] + v * aby
        out[2] = a[2] + v * abz
        dx = q[0] - out[0]
        dy = q[1] - out[1]
        dz = q[2] - out[2]
        return dx * dx + dy * dy + dz * dz

    cpx = q[0] - c[0]
    cpy = q[1] - c[1]
    cpz = q[2] - c[2]
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        out[0], out[1], out[2] = c[0], c[1], c[2]
        return cpx * cpx + cpy * cpy + cpz * cpz

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        out[0] = a[0] + w * acx
        out[1] = a[1] + w * acy
        out[2] = a[2] + w * acz
        dx = q[0] - out[0]
        dy = q[1] - out[1]
        dz = q[2] - out[2]
        return dx * dx + dy * dy + dz * dz

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        out[0] = b[0] + w * (c[0] - b[0])
        out[1] = b[1] + w * (c[1] - b[1])
        out[2] = b[2] + w * (c[2] - b[2])
        dx = q[0] - out[0]
        dy = q[1] - out[1]
        dz = q[2] - out[2]
        return dx * dx + dy * dy + dz * dz

    denom = va + vb + vc
    if denom != 0.0:
        v = vb / denom
        w = vc / denom
    else:
        v = 0.0
        w = 0.0
    out[0] = a[0] + v * abx + w * acx
    out[1] = a[1] + v * aby + w * acy
    out[2] = a[2] + v * abz + w * acz
    dx = q[0] - out[0]
    dy = q[1] - out[1]
    dz = q[2] - out[2]
    return dx * dx + dy * dy + dz * dz


TIE_BAND = 1e-12  # relative distance band treated as an exact tie


@njit(cache=True)
def _closest_point_single(tris, order, bmin, bmax, left, right, start, count, q, out_point):
    best = 1e300
    best_tri = -1
    tmp = np.empty(3)
    stack = np.empty(128, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_sq_distance(bmin[node], bmax[node], q) > best * (1.0 + TIE_BAND):
            continue
        if left[node] < 0:
            for i in range(start[node], start[node] + count[node]):
                sq = closest_point_on_triangle(tris[i, 0], tris[i, 1], tris[i, 2], q, tmp)
                take = False
                if sq < best * (1.0 - TIE_BAND) or best_tri < 0:
                    take = True
                elif sq <= best * (1.0 + TIE_BAND) and order[i] < best_tri:
                    take = True
                if take:
                    if sq < best:
                        best = sq
                    best_tri = order[i]
                    out_point[0] = tmp[0]
                    out_point[1] = tmp[1]
                    out_point[2] = tmp[2]
        else:
            dl = _box_sq_distance(bmin[left[node]], bmax[left[node]], q)
            dr = _box_sq_distance(bmin[right[node]], bmax[right[node]], q)
            # push the farther child first so the nearer one is explored next
            if dl <= dr:
                stack[top] = right[node]
                top += 1
                stack[top] = left[node]
                top += 1
            else:
                stack[top] = left[node]
                top += 1
                stack[top] = right[node]
                top += 1
    return best, best_tri


@njit(cache=True, parallel=True)
def _closest_point_batch(tris, order, bmin, bmax, left, right, start, count, queries, points,
                         sq, tri):
    for i in prange(len(queries)):
        sq[i], tri[i] = _closest_point_single(
            tris, order, bmin, bmax, left, right, start, count, queries[i], points[i]
        )
