"""Deterministic software rasterizer and depth-map lifting.

Flat shading with geometric triangle normals; the front layer keeps the nearest
surface per pixel and the back layer the farthest, with normals oriented toward
and away from the camera respectively. Depth is perspective-correct (1/z
interpolation), so planar triangles rasterize to exact plane depths.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .camera import Camera, unproject_grid
from .exceptions import EmptySurfaceError, ShapeMismatchError
from .mesh import TriMesh

FRONT = "front"
BACK = "back"

# fraction of the median masked depth below which a 2x2 quad is considered
# continuous by depth_to_mesh (overridable per call)
DEFAULT_DISCONTINUITY_FRACTION = 0.02


class RasterMaps:
    """Per-view silhouette, camera-frame normal map, and depth map.

    `triangle_index` (int32, -1 outside the mask) records which triangle won
    each pixel; it is internal plumbing for visibility and cross-view checks.
    """

    __slots__ = ("mask", "normal", "depth", "triangle_index")

    def __init__(self, mask, normal, depth, triangle_index=None):
        mask = np.asarray(mask, dtype=bool)
        normal = np.asarray(normal, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        if normal.shape != mask.shape + (3,) or depth.shape != mask.shape:
            raise ShapeMismatchError("mask, normal, and depth resolutions disagree")
        if mask.any():
            n_in = normal[mask]
            d_in = depth[mask]
            if not (np.all(np.isfinite(n_in)) and np.all(np.isfinite(d_in))):
                raise ValueError("normal/depth must be finite on the mask")
            if np.any(np.abs(np.linalg.norm(n_in, axis=1) - 1.0) > 1e-6):
                raise ValueError("masked normals must be unit length within 1e-6")
            if np.any(d_in <= 0):
                raise ValueError("masked depth must be positive")
        if triangle_index is None:
            triangle_index = np.where(mask, 0, -1).astype(np.int32)
        else:
            triangle_index = np.asarray(triangle_index, dtype=np.int32)
            if triangle_index.shape != mask.shape:
                raise ShapeMismatchError("triangle_index resolution disagrees")
        for arr in (mask, normal, depth, triangle_index):
            arr.flags.writeable = False
        self.mask = mask
        self.normal = normal
        self.depth = depth
        self.triangle_index = triangle_index

    @property
    def resolution(self):
        return self.mask.shape

    def depth_field(self) -> "DepthField":
        return DepthField(self.depth, self.mask)


class DepthField:
    """Per-pixel depth over a masked raster grid."""

    __slots__ = ("depth", "mask")

    def __init__(self, depth, mask):
        depth = np.asarray(depth, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if depth.shape != mask.shape:
            raise ShapeMismatchError("depth and mask resolutions disagree")
        if mask.any():
            d_in = depth[mask]
            if not np.all(np.isfinite(d_in)) or np.any(d_in <= 0):
                raise ValueError("masked depth must be finite and positive")
        depth.flags.writeable = False
        mask.flags.writeable = False
        self.depth = depth
        self.mask = mask

    @property
    def resolution(self):
        return self.depth.shape


def render_arrays(mesh: TriMesh, cam: Camera, layer: str = FRONT):
    """Raw z-buffer render: (mask, normal, depth, triangle_index) arrays.

    Skips RasterMaps invariant validation; used by inner optimization loops.
    """
    if layer not in (FRONT, BACK):
        raise ValueError(f"layer must be '{FRONT}' or '{BACK}'")
    if mesh.n_triangles == 0:
        raise EmptySurfaceError("cannot rasterize an empty mesh")
    back = layer == BACK
    h, w = cam.height, cam.width
    verts_cam = cam.world_to_camera(mesh.vertices)
    z = verts_cam[:, 2]
    safe_z = np.where(z > 1e-9, z, 1.0)
    pts2d = np.empty((len(z), 2))
    pts2d[:, 0] = cam.fx * verts_cam[:, 0] / safe_z + cam.cx
    pts2d[:, 1] = cam.fy * verts_cam[:, 1] / safe_z + cam.cy

    zbuf = np.full((h, w), -np.inf if back else np.inf)
    tri_id = np.full((h, w), -1, dtype=np.int32)
    _raster_kernel(
        np.ascontiguousarray(pts2d),
        np.ascontiguousarray(z),
        np.ascontiguousarray(mesh.triangles),
        h,
        w,
        back,
        zbuf,
        tri_id,
    )

    mask = tri_id >= 0
    depth = np.where(mask, zbuf, 0.0)
    normal = np.zeros((h, w, 3))
    if mask.any():
        tri_normals_cam = mesh.triangle_normals() @ cam.rotation.T
        vs, us = np.nonzero(mask)
        n = tri_normals_cam[tri_id[vs, us]]
        ray = np.stack(
            [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones(len(us))], axis=1
        )
        facing = np.einsum("ij,ij->i", n, ray)
        if back:
            n = np.where(facing[:, None] < 0.0, -n, n)
        else:
            n = np.where(facing[:, None] > 0.0, -n, n)
        normal[vs, us] = n
    return mask, normal, depth, tri_id


def rasterize(mesh: TriMesh, cam: Camera, layer: str = FRONT) -> RasterMaps:
    """Z-buffer rasterization of the mesh at the camera's resolution.

    A mesh entirely behind the camera yields an all-false mask.
    """
    mask, normal, depth, tri_id = render_arrays(mesh, cam, layer)
    return RasterMaps(mask, normal, depth, tri_id)


def depth_to_mesh(field: DepthField, cam: Camera, discontinuity_threshold: float | None = None) -> TriMesh:
    """Lift a masked depth map to a world-space triangle mesh.

    Each fully masked 2x2 pixel quad whose depth spread stays below the
    discontinuity threshold becomes two triangles, wound so geometric normals
    face the camera. Threshold defaults to 2% of the median masked depth.
    """
    mask = field.mask
    if mask.sum() < 3:
        raise EmptySurfaceError("mask has fewer than 3 pixels")
    if discontinuity_threshold is None:
        discontinuity_threshold = DEFAULT_DISCONTINUITY_FRACTION * float(
            np.median(field.depth[mask])
        )
    q = mask[:-1, :-1] & mask[:-1, 1:] & mask[1:, :-1] & mask[1:, 1:]
    if q.any():
        d00 = field.depth[:-1, :-1]
        d01 = field.depth[:-1, 1:]
        d10 = field.depth[1:, :-1]
        d11 = field.depth[1:, 1:]
        dmax = np.maximum(np.maximum(d00, d01), np.maximum(d10, d11))
        dmin = np.minimum(np.minimum(d00, d01), np.minimum(d10, d11))
        q &= (dmax - dmin) < discontinuity_threshold
    if not q.any():
        raise EmptySurfaceError("no continuous 2x2 quad in the depth field")

    used = np.zeros_like(mask)
    used[:-1, :-1] |= q
    used[:-1, 1:] |= q
    used[1:, :-1] |= q
    used[1:, 1:] |= q
    vs, us = np.nonzero(used)
    vert_index = np.full(mask.shape, -1, dtype=np.int64)
    vert_index[vs, us] = np.arange(len(vs))
    vertices = unproject_grid(us.astype(float), vs.astype(float), field.depth[vs, us], cam)

    qv, qu = np.nonzero(q)
    i00 = vert_index[qv, qu]
    i01 = vert_index[qv, qu + 1]
    i10 = vert_index[qv + 1, qu]
    i11 = vert_index[qv + 1, qu + 1]
    tris = np.concatenate(
        [np.stack([i00, i10, i01], axis=1), np.stack([i01, i10, i11], axis=1)]
    )
    return TriMesh(vertices, tris)


@njit(cache=True)
def _raster_kernel(pts2d, z, tris, h, w, back, zbuf, tri_id):
    for t in range(len(tris)):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        z0 = z[i0]
        z1 = z[i1]
        z2 = z[i2]
        if z0 <= 1e-9 or z1 <= 1e-9 or z2 <= 1e-9:
            continue
        x0 = pts2d[i0, 0]
        y0 = pts2d[i0, 1]
        x1 = pts2d[i1, 0]
        y1 = pts2d[i1, 1]
        x2 = pts2d[i2, 0]
        y2 = pts2d[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        inv_area = 1.0 / area
        xmin = min(x0, min(x1, x2))
        xmax = max(x0, max(x1, x2))
        ymin = min(y0, min(y1, y2))
        ymax = max(y0, max(y1, y2))
        u_lo = max(int(np.ceil(xmin)), 0)
        u_hi = min(int(np.floor(xmax)), w - 1)
        v_lo = max(int(np.ceil(ymin)), 0)
        v_hi = min(int(np.floor(ymax)), h - 1)
        if u_lo > u_hi or v_lo > v_hi:
            continue
        iz0 = 1.0 / z0
        iz1 = 1.0 / z1
        iz2 = 1.0 / z2
        for v in range(v_lo, v_hi + 1):
            fv = float(v)
            for u in range(u_lo, u_hi + 1):
                fu = float(u)
                w0 = ((x1 - fu) * (y2 - fv) - (x2 - fu) * (y1 - fv)) * inv_area
                if w0 < 0.0:
                    continue
                w1 = ((x2 - fu) * (y0 - fv) - (x0 - fu) * (y2 - fv)) * inv_area
                if w1 < 0.0:
                    continue
                w2 = 1.0 - w0 - w1
                if w2 < 0.0:
                    continue
                zi = 1.0 / (w0 * iz0 + w1 * iz1 + w2 * iz2)
                if back:
                    if zi > zbuf[v, u]:
                        zbuf[v, u] = zi
                        tri_id[v, u] = t
                else:
                    if zi < zbuf[v, u]:
                        zbuf[v, u] = zi
                        tri_id[v, u] = t
