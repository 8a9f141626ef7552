"""Clothed-normal providers and cross-view normal transfer.

A provider yields per-view clothed normal maps on a camera's pixel grid,
expressed in that camera's frame. The oracle provider renders a ground-truth
clothed mesh; the file provider reads maps produced elsewhere (for example by
a learned estimator). `rotate_normal_map` re-expresses a map's vectors in
another camera's frame given the relative rotation.
"""

from __future__ import annotations

import json
import logging
import os

import numpy as np

from .camera import Camera
from .exceptions import ShapeMismatchError
from .image_io import load_pfm, load_pgm_mask, save_pfm, save_pgm_mask
from .mesh import TriMesh
from .raster import FRONT, RasterMaps, rasterize
from .rotations import Rotation

logger = logging.getLogger(__name__)


class ClothedNormalMap:
    """Unit normal vectors over a masked pixel grid, in a named camera frame."""

    __slots__ = ("normal", "mask", "frame")

    def __init__(self, normal, mask, frame: str):
        if not frame:
            raise ValueError("frame identifier must be set")
        normal = np.asarray(normal, dtype=np.float64)
        mask = np.asarray(mask, dtype=bool)
        if normal.shape != mask.shape + (3,):
            raise ShapeMismatchError("normal must be (H, W, 3) matching the mask")
        if mask.any():
            norms = np.linalg.norm(normal[mask], axis=1)
            if not np.all(np.isfinite(norms)) or np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValueError("masked normals must be finite unit vectors within 1e-6")
        normal.flags.writeable = False
        mask.flags.writeable = False
        self.normal = normal
        self.mask = mask
        self.frame = str(frame)

    @property
    def resolution(self):
        return self.mask.shape

    @classmethod
    def from_raster(cls, maps: RasterMaps, frame: str) -> "ClothedNormalMap":
        return cls(maps.normal, maps.mask, frame)


class OracleNormalProvider:
    """Renders clothed normal maps from a ground-truth mesh (synthetic mode)."""

    capability = "oracle"

    def __init__(self, gt_clothed: TriMesh):
        self.gt_clothed = gt_clothed

    def get(self, cam: Camera, layer: str = FRONT, frame: str = "") -> ClothedNormalMap:
        maps = rasterize(self.gt_clothed, cam, layer)
        return ClothedNormalMap.from_raster(maps, frame or f"camera@{id(cam)}")

    def get_raster(self, cam: Camera, layer: str = FRONT) -> RasterMaps:
        return rasterize(self.gt_clothed, cam, layer)


class FileNormalProvider:
    """Loads maps from `<dir>/<key>_normals.pfm` + `<key>_mask.pgm`, with frame
    identifiers recorded in `<dir>/normals_manifest.json` keyed by view index."""

    capability = "file"

    def __init__(self, directory):
        self.directory = str(directory)
        manifest_path = os.path.join(self.directory, "normals_manifest.json")
        if os.path.exists(manifest_path):
            with open(manifest_path) as fh:
                self.manifest = json.load(fh)
        else:
            self.manifest = {}

    def get_by_key(self, key: str, cam: Camera) -> ClothedNormalMap:
        path = os.path.join(self.directory, f"{key}_normals.pfm")
        dropped, cmap = load_normal_map(
            path, cam, frame=self.manifest.get(key, {}).get("frame", key)
        )
        return cmap


def oracle_normals(gt_clothed: TriMesh, cam: Camera, layer: str = FRONT,
                   frame: str = "") -> ClothedNormalMap:
    """One-shot oracle: rasterize the ground-truth clothed mesh in `cam`."""
    return OracleNormalProvider(gt_clothed).get(cam, layer, frame)


def rotate_normal_map(cmap: ClothedNormalMap, rot: Rotation, target_frame: str) -> ClothedNormalMap:
    """Re-express masked vectors in another frame: v -> R v. Mask unchanged."""
    rotated = np.zeros_like(cmap.normal)
    rotated[cmap.mask] = cmap.normal[cmap.mask] @ rot.matrix.T
    return ClothedNormalMap(rotated, cmap.mask.copy(), target_frame)


def save_normal_map(path_base, cmap: ClothedNormalMap) -> None:
    """Write `<base>_normals.pfm` and the sibling `<base>_mask.pgm`."""
    save_pfm(f"{path_base}_normals.pfm", cmap.normal.astype(np.float32))
    save_pgm_mask(f"{path_base}_mask.pgm", cmap.mask)


def load_normal_map(path, cam: Camera, frame: str, mask_path=None):
    """Load a 3-channel PFM as a normal map for `cam`.

    Masked pixels with zero (or non-finite) vectors are dropped from the mask;
    the number of dropped pixels is returned alongside the map and logged.
    Returns (dropped_count, ClothedNormalMap).
    """
    raw = load_pfm(path)
    if raw.ndim != 3:
        raise ShapeMismatchError(f"{path}: expected a 3-channel PFM normal map")
    if raw.shape[:2] != (cam.height, cam.width):
        raise ShapeMismatchError(
            f"{path}: map is {raw.shape[1]}x{raw.shape[0]}, camera is "
            f"{cam.width}x{cam.height}"
        )
    if mask_path is None:
        base = str(path)
        if base.endswith("_normals.pfm"):
            mask_path = base[: -len("_normals.pfm")] + "_mask.pgm"
        else:
            mask_path = os.path.splitext(base)[0] + "_mask.pgm"
    mask = load_pgm_mask(mask_path)
    if mask.shape != raw.shape[:2]:
        raise ShapeMismatchError(f"{mask_path}: mask resolution disagrees with the map")
    vectors = raw.astype(np.float64)
    norms = np.linalg.norm(vectors, axis=2)
    valid = mask & (norms > 1e-12) & np.all(np.isfinite(vectors), axis=2)
    dropped = int(mask.sum() - valid.sum())
    if dropped:
        logger.warning("%s: dropped %d masked pixels with invalid normals", path, dropped)
    normal = np.zeros_like(vectors)
    normal[valid] = vectors[valid] / norms[valid][:, None]
    return dropped, ClothedNormalMap(normal, valid, frame)
