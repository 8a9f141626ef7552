"""Axis-angle / quaternion / matrix rotation utilities.

Axis-angle vectors are 3-vectors whose direction is the rotation axis and whose
norm is the angle in radians. Quaternions are (w, x, y, z) with unit norm.
"""

from __future__ import annotations

import numpy as np

ORTHONORMAL_TOL = 1e-9


def is_rotation_matrix(mat: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (3, 3):
        return False
    if not np.all(np.isfinite(mat)):
        return False
    if np.max(np.abs(mat @ mat.T - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(mat) - 1.0) <= max(tol, 1e-9)


class Rotation:
    """A proper rotation, stored as a 3x3 orthonormal matrix with det +1."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float)
        if not is_rotation_matrix(matrix):
            raise ValueError("matrix is not orthonormal with determinant +1")
        matrix.flags.writeable = False
        self.matrix = matrix

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    @classmethod
    def from_axis_angle(cls, axis_angle) -> "Rotation":
        return cls(axis_angle_to_matrix(np.asarray(axis_angle, dtype=float)))

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate a (..., 3) array of vectors."""
        return np.asarray(vectors, dtype=float) @ self.matrix.T

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to applying `other` first, then `self`."""
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic angle in radians between two rotations."""
        tr = np.trace(self.matrix.T @ other.matrix)
        return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))

    def __repr__(self):
        return f"Rotation({self.matrix.tolist()})"


def axis_angle_to_matrix(a: np.ndarray) -> np.ndarray:
    """Rodrigues formula; exact series for small angles."""
    a = np.asarray(a, dtype=float)
    theta = np.linalg.norm(a)
    k = skew(a)
    if theta < 1e-12:
        # second-order expansion keeps orthonormality to machine precision here
        return np.eye(3) + k + 0.5 * (k @ k)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * k + c * (k @ k)


def matrix_to_axis_angle(mat: np.ndarray) -> np.ndarray:
    q = matrix_to_quaternion(mat)
    return quaternion_to_axis_angle(q)


def axis_angle_to_quaternion(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    theta = np.linalg.norm(a)
    if theta < 1e-12:
        # sin(t/2)/t ~ 1/2 - t^2/48
        half_sinc = 0.5 - theta * theta / 48.0
        return np.concatenate(([np.cos(theta / 2.0)], half_sinc * a))
    return np.concatenate(([np.cos(theta / 2.0)], np.sin(theta / 2.0) * a / theta))


def quaternion_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[0] < 0.0:
        q = -q
    w = min(q[0], 1.0)
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-12:
        return 2.0 * q[1:]  # small-angle: aa ~ 2 * vector part
    theta = 2.0 * np.arctan2(vec_norm, w)
    return theta * q[1:] / vec_norm


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(mat: np.ndarray) -> np.ndarray:
    """Shepperd's method, numerically stable for all rotations."""
    m = np.asarray(mat, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def mean_axis_angle(axis_angles) -> np.ndarray:
    """Chordal quaternion mean: sign-align to the first, average, renormalize."""
    quats = np.array([axis_angle_to_quaternion(a) for a in axis_angles])
    signs = np.where(quats @ quats[0] < 0.0, -1.0, 1.0)
    mean = (quats * signs[:, None]).mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise ValueError("quaternion mean is degenerate (antipodal inputs)")
    return quaternion_to_axis_angle(mean / norm)


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_jacobian(a: np.ndarray):
    """R(a) and the three matrices dR/da_i (Gallego & Yezzi closed form)."""
    a = np.asarray(a, dtype=float)
    rot = axis_angle_to_matrix(a)
    theta2 = float(a @ a)
    if theta2 < 1e-16:
        basis = np.eye(3)
        return rot, [skew(basis[i]) for i in range(3)]
    eye_min_rot = np.eye(3) - rot
    ka = skew(a)
    derivs = []
    for i in range(3):
        term = a[i] * ka + skew(np.cross(a, eye_min_rot[:, i]))
        derivs.append((term / theta2) @ rot)
    return rot, derivs
