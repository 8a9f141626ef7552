"""Pinhole camera model and projection helpers.

Conventions (fixed for bit-exact map files): pixel centers sit at integer
coordinates, origin at the top-left, +x right, +y down. The camera frame is
x right, y down, z forward; `rotation` maps world vectors into that frame and
`translation` is the world origin expressed in camera coordinates, so
p_cam = R @ p_world + t. No lens distortion.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import BehindCameraError
from .rotations import Rotation, is_rotation_matrix

MIN_DEPTH = 1e-9


class Camera:
    __slots__ = ("fx", "fy", "cx", "cy", "width", "height", "rotation", "translation")

    def __init__(self, fx, fy, cx, cy, width, height, rotation, translation):
        if not (fx > 0 and fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (width >= 1 and height >= 1):
            raise ValueError("resolution must be at least 1x1")
        rotation = np.array(rotation, dtype=float)
        if not is_rotation_matrix(rotation):
            raise ValueError("rotation must be orthonormal with determinant +1")
        translation = np.array(translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(translation)):
            raise ValueError("translation must be finite")
        self.fx = float(fx)
        self.fy = float(fy)
        self.cx = float(cx)
        self.cy = float(cy)
        self.width = int(width)
        self.height = int(height)
        rotation.flags.writeable = False
        translation.flags.writeable = False
        self.rotation = rotation
        self.translation = translation

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def diagonal_px(self) -> float:
        return float(np.hypot(self.width, self.height))

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def resolution_key(self) -> tuple:
        return (self.height, self.width)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            d["fx"],
            d["fy"],
            d["cx"],
            d["cy"],
            d["width"],
            d["height"],
            np.array(d["rotation"], dtype=float).reshape(3, 3),
            d["translation"],
        )

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return (
            f"Camera(fx={self.fx}, fy={self.fy}, {self.width}x{self.height}, "
            f"center={self.center.round(4).tolist()})"
        )


def project(point, cam: Camera):
    """Project a world point: returns ((px, py), depth). Depth is camera-space z.

    Raises BehindCameraError for z <= 1e-9.
    """
    point = np.asarray(point, dtype=float)
    if not np.all(np.isfinite(point)):
        raise ValueError("point must be finite")
    x, y, z = cam.world_to_camera(point)
    if z <= MIN_DEPTH:
        raise BehindCameraError(f"point at camera depth {z:.3g} <= {MIN_DEPTH}")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]), float(z)


def project_many(points: np.ndarray, cam: Camera):
    """Vectorized projection. Returns (pixels (n,2), depths (n,), valid (n,) bool).

    Points at or behind the camera plane get valid=False instead of raising.
    """
    pc = cam.world_to_camera(points)
    z = pc[:, 2]
    valid = z > MIN_DEPTH
    safe_z = np.where(valid, z, 1.0)
    px = np.empty((len(pc), 2))
    px[:, 0] = cam.fx * pc[:, 0] / safe_z + cam.cx
    px[:, 1] = cam.fy * pc[:, 1] / safe_z + cam.cy
    return px, z, valid


def unproject(pixel, depth, cam: Camera) -> np.ndarray:
    """Inverse of project: pixel + camera-space depth -> world point."""
    u, v = pixel
    if depth <= 0:
        raise ValueError("depth must be positive")
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.camera_to_world(pc)


def unproject_grid(us: np.ndarray, vs: np.ndarray, depths: np.ndarray, cam: Camera) -> np.ndarray:
    """Vectorized unprojection of pixel arrays to world points (n,3)."""
    pc = np.stack(
        [
            (np.asarray(us, dtype=float) - cam.cx) / cam.fx * depths,
            (np.asarray(vs, dtype=float) - cam.cy) / cam.fy * depths,
            np.asarray(depths, dtype=float),
        ],
        axis=-1,
    )
    return cam.camera_to_world(pc)


def relative_rotation(cam_from: Camera, cam_to: Camera) -> Rotation:
    """Rotation mapping camera-frame vectors of `cam_from` into `cam_to`'s frame."""
    return Rotation(cam_to.rotation @ cam_from.rotation.T)


def look_at_camera(
    position, target, fx, fy, width, height, cx=None, cy=None, up=(0.0, 1.0, 0.0)
) -> Camera:
    """Camera at `position` looking at `target` with world-up roll."""
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    up = np.asarray(up, dtype=float)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera position coincides with target")
    forward = forward / norm
    right = np.cross(up, forward)
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-9:
        raise ValueError("viewing direction is parallel to the up vector")
    right = right / right_norm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ position
    if cx is None:
        cx = (width - 1) / 2.0
    if cy is None:
        cy = (height - 1) / 2.0
    return Camera(fx, fy, cx, cy, width, height, rotation, translation)


def save_cameras(path, cameras) -> None:
    """Write one camera (dict) or a list of cameras to a JSON file."""
    if isinstance(cameras, Camera):
        payload = cameras.to_dict()
    else:
        payload = [c.to_dict() for c in cameras]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def load_cameras(path):
    """Read a camera JSON file; returns a Camera or a list of Camera."""
    with open(path) as fh:
        payload = json.load(fh)
    if isinstance(payload, dict):
        return Camera.from_dict(payload)
    return [Camera.from_dict(d) for d in payload]
