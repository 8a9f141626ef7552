"""Skinned parametric body: shape blendshapes, articulated skeleton, LBS.

The body is controlled by shape coefficients (beta), per-joint axis-angle
rotations (theta), and a global rotation + translation applied last about the
world origin. Landmarks are the skeleton joints plus face points rigidly
attached to the head joint.
"""

from __future__ import annotations

import json

import numpy as np

from .exceptions import EmptyInputError, ShapeMismatchError
from .mesh import TriMesh
from .rotations import axis_angle_jacobian, axis_angle_to_matrix, mean_axis_angle

BETA_BOX = 5.0  # optimization box on |beta_i|


class BodyModel:
    """Immutable skinned template with skeleton, blendshapes, and landmarks."""

    def __init__(
        self,
        template_vertices,
        triangles,
        shape_basis,
        joint_regressor,
        parent,
        skin_weights,
        landmark_joints,
        head_joint,
        face_offsets,
        joint_names=None,
        head_up_rest=(0.0, 1.0, 0.0),
    ):
        self.template_vertices = np.ascontiguousarray(template_vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.shape_basis = np.ascontiguousarray(shape_basis, dtype=np.float64)
        self.joint_regressor = np.ascontiguousarray(joint_regressor, dtype=np.float64)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.skin_weights = np.ascontiguousarray(skin_weights, dtype=np.float64)
        self.landmark_joints = list(int(j) for j in landmark_joints)
        self.head_joint = int(head_joint)
        self.face_offsets = np.ascontiguousarray(face_offsets, dtype=np.float64).reshape(-1, 3)
        self.joint_names = list(joint_names) if joint_names else [
            f"joint_{k}" for k in range(len(self.parent))
        ]
        self.head_up_rest = np.asarray(head_up_rest, dtype=np.float64)
        self.head_up_rest = self.head_up_rest / np.linalg.norm(self.head_up_rest)
        self._validate()
        # topological order (parents before children) and ancestor chains
        k = self.n_joints
        order = [0]
        while len(order) < k:
            for j in range(k):
                if j not in order and self.parent[j] in order:
                    order.append(j)
        self.topo_order = order
        self.ancestors = []
        for j in range(k):
            chain = []
            p = self.parent[j]
            while p >= 0:
                chain.append(int(p))
                p = self.parent[p]
            self.ancestors.append(chain)
        # rest-joint response to each shape direction: (B, K, 3)
        self.basis_joints = np.einsum("kn,bnc->bkc", self.joint_regressor, self.shape_basis)

    def _validate(self):
        n, k = self.skin_weights.shape
        if n != len(self.template_vertices) or k != len(self.parent):
            raise ShapeMismatchError("skin_weights shape disagrees with template/joints")
        if self.joint_regressor.shape != (k, n):
            raise ShapeMismatchError("joint_regressor must be (K, N)")
        if self.shape_basis.shape[1:] != (n, 3):
            raise ShapeMismatchError("shape_basis must be (B, N, 3)")
        if np.any(self.skin_weights < -1e-12):
            raise ValueError("skin weights must be nonnegative")
        if np.any(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("skin weight rows must sum to 1 within 1e-9")
        if self.parent[0] != -1 or np.any(self.parent[1:] < 0):
            raise ValueError("skeleton must be a tree rooted at joint 0")
        for j in range(1, k):
            seen = set()
            p = j
            while p != 0:
                if p in seen or p < 0:
                    raise ValueError("skeleton hierarchy contains a cycle")
                seen.add(p)
                p = int(self.parent[p])
        if any(j < 0 or j >= k for j in self.landmark_joints):
            raise ValueError("landmark joints out of range")
        if not (0 <= self.head_joint < k):
            raise ValueError("head joint out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.template_vertices)

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    @property
    def n_shape(self) -> int:
        return len(self.shape_basis)

    @property
    def n_landmarks(self) -> int:
        return len(self.landmark_joints) + len(self.face_offsets)

    def n_params(self) -> int:
        return self.n_shape + 3 * self.n_joints + 6

    def param_slices(self):
        """Vector layout: beta | theta (K*3) | global rotation | translation."""
        b = self.n_shape
        t = 3 * self.n_joints
        return {
            "beta": slice(0, b),
            "theta": slice(b, b + t),
            "global_rotation": slice(b + t, b + t + 3),
            "global_translation": slice(b + t + 3, b + t + 6),
        }

    def to_dict(self) -> dict:
        return {
            "template_vertices": self.template_vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "shape_basis": self.shape_basis.tolist(),
            "joint_regressor": self.joint_regressor.tolist(),
            "parent": self.parent.tolist(),
            "skin_weights": self.skin_weights.tolist(),
            "landmark_joints": self.landmark_joints,
            "head_joint": self.head_joint,
            "face_offsets": self.face_offsets.tolist(),
            "joint_names": self.joint_names,
            "head_up_rest": self.head_up_rest.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodyModel":
        return cls(**{k: d[k] for k in (
            "template_vertices", "triangles", "shape_basis", "joint_regressor",
            "parent", "skin_weights", "landmark_joints", "head_joint",
            "face_offsets", "joint_names", "head_up_rest",
        )})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "BodyModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class BodyParams:
    """Shape, pose, and global transform coefficients."""

    __slots__ = ("beta", "theta", "global_rotation", "global_translation")

    def __init__(self, beta, theta, global_rotation=None, global_translation=None):
        self.beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        self.theta = np.asarray(theta, dtype=np.float64).reshape(-1, 3)
        self.global_rotation = (
            np.zeros(3) if global_rotation is None
            else np.asarray(global_rotation, dtype=np.float64).reshape(3)
        )
        self.global_translation = (
            np.zeros(3) if global_translation is None
            else np.asarray(global_translation, dtype=np.float64).reshape(3)
        )
        if not all(
            np.all(np.isfinite(a))
            for a in (self.beta, self.theta, self.global_rotation, self.global_translation)
        ):
            raise ValueError("body parameters must be finite")
        if np.any(np.abs(self.beta) > BETA_BOX + 1e-12):
            raise ValueError(f"|beta| must stay within the {BETA_BOX} optimization box")

    @classmethod
    def zeros(cls, model: BodyModel) -> "BodyParams":
        return cls(np.zeros(model.n_shape), np.zeros((model.n_joints, 3)))

    def copy(self) -> "BodyParams":
        return BodyParams(
            self.beta.copy(), self.theta.copy(),
            self.global_rotation.copy(), self.global_translation.copy(),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.beta, self.theta.reshape(-1), self.global_rotation, self.global_translation]
        )

    @classmethod
    def from_vector(cls, model: BodyModel, vec: np.ndarray) -> "BodyParams":
        s = model.param_slices()
        return cls(
            vec[s["beta"]],
            vec[s["theta"]].reshape(-1, 3),
            vec[s["global_rotation"]],
            vec[s["global_translation"]],
        )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
            "global_rotation": self.global_rotation.tolist(),
            "global_translation": self.global_translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodyParams":
        return cls(d["beta"], d["theta"], d["global_rotation"], d["global_translation"])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "BodyParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- forward kinematics -------------------------------------------------------


def shaped_vertices(model: BodyModel, beta: np.ndarray) -> np.ndarray:
    if len(beta) != model.n_shape:
        raise ShapeMismatchError(
            f"beta has {len(beta)} coefficients, model expects {model.n_shape}"
        )
    return model.template_vertices + np.einsum("b,bnc->nc", beta, model.shape_basis)


def rest_joints(model: BodyModel, beta: np.ndarray) -> np.ndarray:
    return model.joint_regressor @ shaped_vertices(model, beta)


def forward_kinematics(model: BodyModel, params: BodyParams):
    """World (pre-global) joint rotations and positions: (R_w (K,3,3), t_w (K,3))."""
    if params.theta.shape != (model.n_joints, 3):
        raise ShapeMismatchError(
            f"theta has shape {params.theta.shape}, model expects ({model.n_joints}, 3)"
        )
    joints = rest_joints(model, params.beta)
    k = model.n_joints
    rot_w = np.empty((k, 3, 3))
    pos_w = np.empty((k, 3))
    for j in model.topo_order:
        local = axis_angle_to_matrix(params.theta[j])
        p = model.parent[j]
        if p < 0:
            rot_w[j] = local
            pos_w[j] = joints[j]
        else:
            rot_w[j] = rot_w[p] @ local
            pos_w[j] = pos_w[p] + rot_w[p] @ (joints[j] - joints[p])
    return rot_w, pos_w


def skin(model: BodyModel, params: BodyParams) -> TriMesh:
    """Pose the template: blendshapes, FK, LBS, then the global transform."""
    verts = shaped_vertices(model, params.beta)
    joints = rest_joints(model, params.beta)
    rot_w, pos_w = forward_kinematics(model, params)
    posed = np.zeros_like(verts)
    for j in range(model.n_joints):
        w = model.skin_weights[:, j]
        active = w > 0
        if not active.any():
            continue
        moved = (verts[active] - joints[j]) @ rot_w[j].T + pos_w[j]
        posed[active] += w[active, None] * moved
    rot_g = axis_angle_to_matrix(params.global_rotation)
    final = posed @ rot_g.T + params.global_translation
    return TriMesh(final, model.triangles)


def joints3d(model: BodyModel, params: BodyParams) -> np.ndarray:
    """Posed joint centers after FK and the global transform, (K, 3)."""
    _, pos_w = forward_kinematics(model, params)
    rot_g = axis_angle_to_matrix(params.global_rotation)
    return pos_w @ rot_g.T + params.global_translation


def landmarks3d(model: BodyModel, params: BodyParams) -> np.ndarray:
    """Landmark points: designated joints plus head-attached face points, (L, 3)."""
    rot_w, pos_w = forward_kinematics(model, params)
    pts = [pos_w[j] for j in model.landmark_joints]
    h = model.head_joint
    for off in model.face_offsets:
        pts.append(pos_w[h] + rot_w[h] @ off)
    pts = np.array(pts)
    rot_g = axis_angle_to_matrix(params.global_rotation)
    return pts @ rot_g.T + params.global_translation


def head_pitch_vector(model: BodyModel, params: BodyParams) -> np.ndarray:
    """The head bone's up axis in world coordinates; unit length."""
    rot_w, _ = forward_kinematics(model, params)
    rot_g = axis_angle_to_matrix(params.global_rotation)
    v = rot_g @ rot_w[model.head_joint] @ model.head_up_rest
    return v / np.linalg.norm(v)


def average_params(estimates) -> BodyParams:
    """Parameter average: arithmetic for beta/translation, chordal quaternion
    mean for every rotation (per-joint theta and the global rotation)."""
    estimates = list(estimates)
    if not estimates:
        raise EmptyInputError("average_params needs at least one estimate")
    n_shape = len(estimates[0].beta)
    n_joints = estimates[0].theta.shape[0]
    for e in estimates:
        if len(e.beta) != n_shape or e.theta.shape[0] != n_joints:
            raise ShapeMismatchError("estimates have inconsistent dimensions")
    beta = np.mean([e.beta for e in estimates], axis=0)
    trans = np.mean([e.global_translation for e in estimates], axis=0)
    theta = np.stack(
        [mean_axis_angle([e.theta[j] for e in estimates]) for j in range(n_joints)]
    )
    glob = mean_axis_angle([e.global_rotation for e in estimates])
    return BodyParams(beta, theta, glob, trans)


# -- analytic derivatives (used by landmark / head loss gradients) -------------


def _fk_with_rotation_derivatives(model: BodyModel, params: BodyParams):
    """FK plus, per joint k and component i, the matrix B s.t.
    d(pos_w[m])/d(theta[k,i]) = B @ (pos_w[m] - pos_w[k]) for descendants m."""
    joints = rest_joints(model, params.beta)
    k = model.n_joints
    rot_w = np.empty((k, 3, 3))
    pos_w = np.empty((k, 3))
    b_mats = np.empty((k, 3, 3, 3))
    for j in model.topo_order:
        local, dlocal = axis_angle_jacobian(params.theta[j])
        p = model.parent[j]
        parent_rot = np.eye(3) if p < 0 else rot_w[p]
        rot_w[j] = parent_rot @ local
        pos_w[j] = joints[j] if p < 0 else pos_w[p] + rot_w[p] @ (joints[j] - joints[p])
        for i in range(3):
            b_mats[j, i] = parent_rot @ dlocal[i] @ local.T @ parent_rot.T
    return joints, rot_w, pos_w, b_mats


def landmarks_with_jacobian(model: BodyModel, params: BodyParams):
    """Landmark world positions (L,3) and their jacobian (L,3,P) over the
    parameter vector layout of BodyParams.to_vector()."""
    joints, rot_w, pos_w, b_mats = _fk_with_rotation_derivatives(model, params)
    slices = model.param_slices()
    n_p = model.n_params()
    h = model.head_joint

    # pre-global landmark positions and the joint whose bone carries each
    pre = [pos_w[j] for j in model.landmark_joints]
    carriers = list(model.landmark_joints)
    for off in model.face_offsets:
        pre.append(pos_w[h] + rot_w[h] @ off)
        carriers.append(h)
    pre = np.array(pre)
    n_l = len(pre)

    # d(pre)/d(beta): chain rest-joint shifts through the FK recursion
    d_joints = model.basis_joints  # (B, K, 3)
    n_b = model.n_shape
    d_pos = np.zeros((n_b, model.n_joints, 3))
    for j in model.topo_order:
        p = model.parent[j]
        if p < 0:
            d_pos[:, j] = d_joints[:, j]
        else:
            d_pos[:, j] = d_pos[:, p] + d_joints[:, j] @ rot_w[p].T - d_joints[:, p] @ rot_w[p].T

    jac_pre = np.zeros((n_l, 3, n_p))
    theta_off = slices["theta"].start
    for m in range(n_l):
        carrier = carriers[m]
        jac_pre[m, :, slices["beta"]] = d_pos[:, carrier, :].T
        # rotation at each ancestor (and the carrier itself for face points)
        affecting = list(model.ancestors[carrier])
        if m >= len(model.landmark_joints):
            affecting = [carrier] + affecting
        lever_base = pre[m]
        for k in affecting:
            lever = lever_base - pos_w[k]
            for i in range(3):
                jac_pre[m, :, theta_off + 3 * k + i] = b_mats[k, i] @ lever

    rot_g, d_rot_g = axis_angle_jacobian(params.global_rotation)
    world = pre @ rot_g.T + params.global_translation
    jac = np.zeros((n_l, 3, n_p))
    jac[:, :, : theta_off + 3 * model.n_joints] = np.einsum(
        "ab,lbp->lap", rot_g, jac_pre[:, :, : theta_off + 3 * model.n_joints]
    )
    g_off = slices["global_rotation"].start
    for i in range(3):
        jac[:, :, g_off + i] = pre @ d_rot_g[i].T
    t_off = slices["global_translation"].start
    jac[:, :, t_off:t_off + 3] = np.broadcast_to(np.eye(3), (n_l, 3, 3))
    return world, jac


def head_pitch_with_jacobian(model: BodyModel, params: BodyParams):
    """Head pitch vector (3,) and its jacobian (3,P)."""
    _, rot_w, _, b_mats = _fk_with_rotation_derivatives(model, params)
    slices = model.param_slices()
    h = model.head_joint
    u_world = rot_w[h] @ model.head_up_rest  # pre-global, unit by construction
    rot_g, d_rot_g = axis_angle_jacobian(params.global_rotation)
    v = rot_g @ u_world
    jac = np.zeros((3, model.n_params()))
    theta_off = slices["theta"].start
    for k in [h] + model.ancestors[h]:
        for i in range(3):
            jac[:, theta_off + 3 * k + i] = rot_g @ (b_mats[k, i] @ u_world)
    g_off = slices["global_rotation"].start
    for i in range(3):
        jac[:, g_off + i] = d_rot_g[i] @ u_world
    return v, jac
