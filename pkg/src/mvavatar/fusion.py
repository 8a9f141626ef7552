"""Watertight surface fusion from oriented points.

The front/back partial surfaces are sampled densely; the posed body prior
fills regions they do not cover (points farther than the exclusion radius from
every partial-surface point). A signed moving-least-squares field over a voxel
grid projects each query onto nearby oriented-point planes; marching cubes
extracts the iso-surface, and the largest connected component is kept. The
result is closed (every edge borders exactly two triangles) or the operation
fails loudly.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import cKDTree
from skimage import measure

from .exceptions import FusionFailedError, IncompleteCloudWarning
from .mesh import TriMesh

SOURCE_FRONT = 0
SOURCE_BACK = 1
SOURCE_FILLER = 2
SOURCE_NAMES = ("front", "back", "filler")


@dataclass
class FuseConfig:
    filler_exclusion_radius_m: float | None = None  # default: 2% of body bbox diagonal
    grid_resolution: int = 128                      # cells along the longest padded axis
    bandwidth_voxels: float = 2.0                   # kernel support radius, in voxel widths
    iso_value: float = 0.0
    padding_voxels: float = 4.0

    def __post_init__(self):
        if self.grid_resolution < 16:
            raise ValueError("grid resolution must be at least 16")
        if self.filler_exclusion_radius_m is not None and self.filler_exclusion_radius_m <= 0:
            raise ValueError("filler exclusion radius must be positive")

    def to_dict(self) -> dict:
        return {
            "filler_exclusion_radius_m": self.filler_exclusion_radius_m,
            "grid_resolution": self.grid_resolution,
            "bandwidth_voxels": self.bandwidth_voxels,
            "iso_value": self.iso_value,
            "padding_voxels": self.padding_voxels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FuseConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class OrientedPointCloud:
    __slots__ = ("points", "normals", "sources")

    def __init__(self, points, normals, sources):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
        self.sources = np.asarray(sources, dtype=np.int8).reshape(-1)
        if not (len(self.points) == len(self.normals) == len(self.sources)):
            raise ValueError("points, normals, and sources must have equal lengths")
        if len(self.points):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("normals must be unit length within 1e-6")

    def __len__(self):
        return len(self.points)

    def filler_fraction(self) -> float:
        if not len(self):
            return 0.0
        return float(np.mean(self.sources == SOURCE_FILLER))


def _mesh_point_samples(mesh: TriMesh):
    """Dense deterministic samples: triangle centroids with face normals plus
    vertices with area-weighted vertex normals."""
    tv = mesh.triangle_vertices()
    centroids = tv.mean(axis=1)
    points = np.concatenate([centroids, mesh.vertices])
    normals = np.concatenate([mesh.triangle_normals(), mesh.area_weighted_vertex_normals()])
    good = np.linalg.norm(normals, axis=1) > 0.5  # unreferenced vertices have no normal
    return points[good], normals[good] / np.linalg.norm(normals[good], axis=1, keepdims=True)


def assemble_cloud(front: TriMesh, back: TriMesh, body: TriMesh | None,
                   cfg: FuseConfig | None = None) -> OrientedPointCloud:
    """Oriented fusion input: front + back surface samples, plus body-prior
    samples farther than the exclusion radius from every front/back point."""
    cfg = cfg or FuseConfig()
    if front.n_triangles == 0 or back.n_triangles == 0:
        raise ValueError("front and back surfaces must be non-empty")
    fp, fn = _mesh_point_samples(front)
    bp, bn = _mesh_point_samples(back)
    points = [fp, bp]
    normals = [fn, bn]
    sources = [np.full(len(fp), SOURCE_FRONT), np.full(len(bp), SOURCE_BACK)]
    if body is None or body.n_triangles == 0:
        warnings.warn(
            "no body prior available: gaps between partial surfaces stay unfilled",
            IncompleteCloudWarning,
        )
    else:
        tau = cfg.filler_exclusion_radius_m
        if tau is None:
            tau = 0.02 * body.bbox_diagonal()
        cp, cn = _mesh_point_samples(body)
        if np.isfinite(tau):
            tree = cKDTree(np.concatenate([fp, bp]))
            dist, _ = tree.query(cp, k=1, workers=-1)
            keep = dist > tau
        else:
            keep = np.zeros(len(cp), dtype=bool)
        points.append(cp[keep])
        normals.append(cn[keep])
        sources.append(np.full(int(keep.sum()), SOURCE_FILLER))
    return OrientedPointCloud(
        np.concatenate(points), np.concatenate(normals), np.concatenate(sources)
    )


def fuse(cloud: OrientedPointCloud, cfg: FuseConfig | None = None):
    """Extract the watertight surface of the oriented cloud.

    Returns (TriMesh, diagnostics dict). Raises FusionFailedError when the
    iso-surface is empty or the selected component is not closed.
    """
    cfg = cfg or FuseConfig()
    if len(cloud) < 100:
        raise ValueError(f"need at least 100 oriented points, got {len(cloud)}")

    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float(np.max(hi - lo))
    if extent <= 0:
        raise ValueError("cloud has zero extent")
    h = extent / max(cfg.grid_resolution - 1 - 2 * cfg.padding_voxels, 8)
    pad = cfg.padding_voxels * h
    origin = lo - pad
    dims = np.ceil((hi - lo + 2 * pad) / h).astype(int) + 1

    axes = [origin[i] + h * np.arange(dims[i]) for i in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    grid_points = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    field = _signed_field(grid_points, dims, cloud, h, cfg).reshape(dims)

    # the extractor works in float32: snap near-level corners toward inside by
    # a margin that survives that precision, so vertices never land exactly on
    # corners and no degenerate triangles appear
    field = field.astype(np.float32)
    snap = np.float32(1e-4 * h)
    level = np.float32(cfg.iso_value)
    near = np.abs(field - level) < snap
    field[near] = level - snap
    # a positive border shell keeps every level crossing interior, so the
    # extracted surface cannot terminate at the volume boundary
    border_value = np.float32(level + h)
    for axis in range(3):
        sl = [slice(None)] * 3
        for edge in (0, -1):
            sl[axis] = edge
            field[tuple(sl)] = border_value

    try:
        verts, faces, grad_normals, _ = measure.marching_cubes(
            field, level=level, spacing=(h, h, h)
        )
    except (ValueError, RuntimeError) as exc:
        raise FusionFailedError(
            f"iso-surface extraction failed: {exc}",
            field_stats=_field_stats(field, level),
        ) from None
    if len(faces) == 0:
        raise FusionFailedError("empty iso-surface", field_stats=_field_stats(field, level))
    verts = verts.astype(np.float64)
    faces = faces.astype(np.int64)

    # orient outward: the returned vertex normals follow gradient descent
    # (toward the inside of our positive-outside field)
    tri = verts[faces]
    geo = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    agree = np.einsum("ij,ij->i", geo, grad_normals[faces[:, 0]]).sum()
    if agree > 0:
        faces = np.ascontiguousarray(faces[:, ::-1])

    verts, faces = _weld_vertices(verts, faces)
    verts, faces = _collapse_slivers(verts, faces)
    verts = verts + origin

    open_edges_pre = _open_edge_count(faces)
    faces, verts, n_components = _largest_component(faces, verts)

    open_edges = _open_edge_count(faces)
    if open_edges:
        raise FusionFailedError(
            f"selected component is not closed: {open_edges} open edges",
            field_stats=_field_stats(field, level),
        )
    mesh = TriMesh(verts, faces)
    diagnostics = {
        "component_count": int(n_components),
        "open_edge_count_pre_selection": int(open_edges_pre),
        "filler_fraction": cloud.filler_fraction(),
        "voxel_size_m": h,
        "grid_dims": [int(d) for d in dims],
        "vertex_count": mesh.n_vertices,
        "triangle_count": mesh.n_triangles,
    }
    return mesh, diagnostics


def _signed_field(grid_points: np.ndarray, dims, cloud: OrientedPointCloud, h: float,
                  cfg: FuseConfig) -> np.ndarray:
    """Signed field: Gaussian MLS plane blend inside the narrow band; outside
    the band the magnitude is the distance to the cloud and the sign comes
    from flood-fill connectivity to the volume border (plane distances
    extrapolate unreliably far from open sheet rims)."""
    from scipy import ndimage

    tree = cKDTree(cloud.points)
    d_nn, i_nn = tree.query(grid_points, k=1, workers=-1)

    support = cfg.bandwidth_voxels * h
    sigma = support / 2.0
    band = d_nn <= 1.5 * support
    field = np.empty(len(grid_points))

    if band.any():
        k = min(12, len(cloud))
        dists, idx = tree.query(grid_points[band], k=k, workers=-1)
        if k == 1:
            dists = dists[:, None]
            idx = idx[:, None]
        w = np.exp(-((dists / sigma) ** 2))
        w[dists > 1.5 * support] = 0.0
        wsum = w.sum(axis=1)
        diffs = grid_points[band][:, None, :] - cloud.points[idx]
        plane = np.einsum("qkj,qkj->qk", diffs, cloud.normals[idx])
        blended = np.einsum("qk,qk->q", w, plane)
        # pixels at the band fringe with no kernel support fall back to the
        # nearest plane distance
        delta = grid_points[band] - cloud.points[i_nn[band]]
        fallback = np.einsum("ij,ij->i", delta, cloud.normals[i_nn[band]])
        field[band] = np.where(wsum > 1e-12, blended / np.maximum(wsum, 1e-300), fallback)

    far = ~band
    if far.any():
        far_grid = far.reshape(dims)
        labels, _ = ndimage.label(far_grid)
        border_labels = np.unique(
            np.concatenate([
                labels[0].ravel(), labels[-1].ravel(),
                labels[:, 0].ravel(), labels[:, -1].ravel(),
                labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
            ])
        )
        outside = np.isin(labels.ravel()[far], border_labels[border_labels > 0])
        field[far] = np.where(outside, d_nn[far], -d_nn[far])
    return field


def _weld_vertices(verts: np.ndarray, faces: np.ndarray):
    """Merge byte-identical vertex positions and drop point/line-degenerate
    faces (faces with a repeated vertex id), which removal keeps edge-paired."""
    unique, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse[faces]
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 2] != faces[:, 0])
    )
    return unique, faces[ok]


SLIVER_AREA = 5e-12  # m^2; above the TriMesh floor with margin


def _collapse_slivers(verts: np.ndarray, faces: np.ndarray):
    """Collapse the shortest edge of near-zero-area triangles (the lower
    vertex index survives). Edge collapse on a closed surface keeps every
    remaining edge paired, so watertightness is preserved."""
    for _ in range(2048):
        tv = verts[faces]
        areas = 0.5 * np.linalg.norm(
            np.cross(tv[:, 1] - tv[:, 0], tv[:, 2] - tv[:, 0]), axis=1
        )
        bad = np.nonzero(areas <= SLIVER_AREA)[0]
        if len(bad) == 0:
            return verts, faces
        face = faces[bad[0]]
        edges = [(face[0], face[1]), (face[1], face[2]), (face[2], face[0])]
        lengths = [np.linalg.norm(verts[a] - verts[b]) for a, b in edges]
        a, b = edges[int(np.argmin(lengths))]
        keep, drop = (a, b) if a < b else (b, a)
        faces = np.where(faces == drop, keep, faces)
        ok = (
            (faces[:, 0] != faces[:, 1])
            & (faces[:, 1] != faces[:, 2])
            & (faces[:, 2] != faces[:, 0])
        )
        faces = faces[ok]
    raise FusionFailedError("sliver collapse did not converge")


def _edge_counts(faces: np.ndarray):
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return counts


def _open_edge_count(faces: np.ndarray) -> int:
    counts = _edge_counts(faces)
    return int(np.sum(counts != 2))


def _largest_component(faces: np.ndarray, verts: np.ndarray):
    n = len(verts)
    rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = csgraph.connected_components(graph, directed=False)
    if n_comp > 1:
        face_label = labels[faces[:, 0]]
        counts = np.bincount(face_label, minlength=n_comp)
        keep_label = int(np.argmax(counts))
        faces = faces[face_label == keep_label]
    used = np.zeros(n, dtype=bool)
    used[faces.reshape(-1)] = True
    remap = np.full(n, -1, dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    return remap[faces], verts[used], n_comp


def _field_stats(field: np.ndarray, level: float) -> dict:
    return {
        "min": float(field.min()),
        "max": float(field.max()),
        "frac_below_level": float(np.mean(field < level)),
    }


def is_closed(mesh: TriMesh) -> bool:
    """True when every edge borders exactly two triangles."""
    if mesh.n_triangles == 0:
        return False
    return _open_edge_count(mesh.triangles) == 0


def euler_characteristic(mesh: TriMesh) -> int:
    edges = np.concatenate(
        [mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]]
    )
    n_edges = len(np.unique(np.sort(edges, axis=1), axis=0))
    return mesh.n_vertices - n_edges + mesh.n_triangles


def save_diagnostics(path, diagnostics: dict) -> None:
    with open(path, "w") as fh:
        json.dump(diagnostics, fh, indent=1)
