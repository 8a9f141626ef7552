"""Procedural capsule-limb humanoid used as the parametric body template.

The template stands upright (+y up) facing +z, feet on y=0, roughly 1.8 m
tall, with arms in a relaxed A-pose. 16 joints, 10 shape directions, ~2000
vertices. Overlapping primitive parts are cleaned by dropping triangles whose
centroid falls strictly inside another part, so surface sampling never emits
interior points.
"""

from __future__ import annotations

import numpy as np

from .body import BodyModel, BodyParams
from .mesh import TriMesh

JOINT_NAMES = [
    "pelvis", "spine", "neck", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
]
PARENT = [-1, 0, 1, 2, 1, 1, 4, 5, 6, 7, 0, 0, 10, 11, 12, 13]

_ARM_DIR_L = np.array([0.766, -0.643, 0.0])
_ARM_DIR_L /= np.linalg.norm(_ARM_DIR_L)
_ARM_DIR_R = _ARM_DIR_L * np.array([-1.0, 1.0, 1.0])

_J = {
    "pelvis": np.array([0.0, 0.95, 0.0]),
    "spine": np.array([0.0, 1.22, 0.0]),
    "neck": np.array([0.0, 1.50, 0.0]),
    "head": np.array([0.0, 1.62, 0.0]),
    "l_shoulder": np.array([0.19, 1.45, 0.0]),
    "r_shoulder": np.array([-0.19, 1.45, 0.0]),
    "l_hip": np.array([0.10, 0.92, 0.0]),
    "r_hip": np.array([-0.10, 0.92, 0.0]),
    "l_knee": np.array([0.10, 0.50, 0.0]),
    "r_knee": np.array([-0.10, 0.50, 0.0]),
    "l_ankle": np.array([0.10, 0.09, 0.0]),
    "r_ankle": np.array([-0.10, 0.09, 0.0]),
}
_J["l_elbow"] = _J["l_shoulder"] + 0.28 * _ARM_DIR_L
_J["r_elbow"] = _J["r_shoulder"] + 0.28 * _ARM_DIR_R
_J["l_wrist"] = _J["l_elbow"] + 0.26 * _ARM_DIR_L
_J["r_wrist"] = _J["r_elbow"] + 0.26 * _ARM_DIR_R

HEAD_CENTER = np.array([0.0, 1.70, 0.005])
HEAD_RADII = np.array([0.095, 0.115, 0.10])

FACE_OFFSETS = np.array(
    [
        [0.0, 0.08, 0.100],    # nose
        [0.0, 0.02, 0.094],    # chin
        [0.038, 0.115, 0.082],  # left eye
        [-0.038, 0.115, 0.082],  # right eye
    ]
)


class _Builder:
    def __init__(self):
        self.verts = []
        self.tris = []
        self.part_id = []          # per-vertex part index
        self.part_names = []
        self.ring_sets = {}        # label -> vertex index list
        self.weights = []          # per-vertex list of (joint, weight)
        self.solids = []           # (kind, payload) for inside tests

    def new_part(self, name):
        self.part_names.append(name)
        return len(self.part_names) - 1

    def add_vertex(self, pos, part, weight_pairs):
        self.verts.append(np.asarray(pos, dtype=float))
        self.part_id.append(part)
        self.weights.append(weight_pairs)
        return len(self.verts) - 1

    def add_ring_label(self, label, ids):
        self.ring_sets.setdefault(label, []).extend(ids)

    def connect_rings(self, ring_a, ring_b):
        n = len(ring_a)
        for i in range(n):
            j = (i + 1) % n
            self.tris.append([ring_a[i], ring_a[j], ring_b[i]])
            self.tris.append([ring_a[j], ring_b[j], ring_b[i]])

    def connect_fan(self, apex, ring, apex_first):
        n = len(ring)
        for i in range(n):
            j = (i + 1) % n
            if apex_first:
                self.tris.append([apex, ring[i], ring[j]])
            else:
                self.tris.append([apex, ring[j], ring[i]])


def _smoothstep(x, lo, hi):
    t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _frame(axis):
    axis = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _capsule(b: _Builder, name, p0, p1, r0, r1, joint0, joint1, n_seg=12, n_rings=6,
             blend_from=0.8, cap_rings=3, ring_labels=None):
    """Tapered capsule from p0 to p1. Vertices up to `blend_from` along the axis
    weight to joint0, then blend smoothly toward joint1 (joint1 may be None)."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis_n = axis / length
    u, v = _frame(axis_n)
    part = b.new_part(name)
    b.solids.append(("capsule", (p0, p1, r0, r1)))
    angles = np.linspace(0.0, 2 * np.pi, n_seg, endpoint=False)

    def weights_at(t):
        if joint1 is None:
            return [(joint0, 1.0)]
        w1 = float(_smoothstep(t, blend_from, 1.0))
        if w1 <= 0.0:
            return [(joint0, 1.0)]
        if w1 >= 1.0:
            return [(joint1, 1.0)]
        return [(joint0, 1.0 - w1), (joint1, w1)]

    def make_ring(center, radius, t):
        ids = []
        for a in angles:
            pos = center + radius * (np.cos(a) * u + np.sin(a) * v)
            ids.append(b.add_vertex(pos, part, weights_at(t)))
        return ids

    rings = []
    ts = np.linspace(0.0, 1.0, n_rings)
    for t in ts:
        rings.append(make_ring(p0 + axis * t, r0 + (r1 - r0) * t, t))
    # hemispherical caps
    for sign, base_center, base_r, t_cap in ((-1.0, p0, r0, 0.0), (1.0, p1, r1, 1.0)):
        prev = rings[0] if sign < 0 else rings[-1]
        for s in range(1, cap_rings):
            phi = s / cap_rings * (np.pi / 2)
            ring = make_ring(
                base_center + sign * np.sin(phi) * base_r * axis_n,
                base_r * np.cos(phi),
                t_cap,
            )
            if sign < 0:
                b.connect_rings(ring, prev)
            else:
                b.connect_rings(prev, ring)
            prev = ring
        apex = b.add_vertex(base_center + sign * base_r * axis_n, part, weights_at(t_cap))
        b.connect_fan(apex, prev, apex_first=sign > 0)
    for i in range(len(rings) - 1):
        b.connect_rings(rings[i], rings[i + 1])
    if ring_labels:
        for label, ring_t in ring_labels.items():
            idx = int(np.argmin(np.abs(ts - ring_t)))
            b.add_ring_label(label, rings[idx])
    return part


def _torso(b: _Builder, n_seg=22):
    """Elliptic tube with per-ring radii; rings hit the pelvis/spine/neck joint
    heights exactly so the joint regressor lands on the bone axis."""
    ys = np.array([0.88, 0.915, 0.95, 1.02, 1.09, 1.16, 1.22, 1.29, 1.36, 1.43, 1.50])
    rx = np.array([0.150, 0.153, 0.155, 0.148, 0.135, 0.140, 0.150, 0.160, 0.170, 0.180, 0.150])
    rz = np.array([0.105, 0.107, 0.108, 0.102, 0.096, 0.098, 0.102, 0.106, 0.110, 0.110, 0.092])
    part = b.new_part("torso")
    b.solids.append(("torso", (ys, rx, rz)))
    angles = np.linspace(0.0, 2 * np.pi, n_seg, endpoint=False)

    def torso_weights(y):
        pelvis_y, spine_y, neck_y = 0.95, 1.22, 1.50
        if y < pelvis_y + 0.04:
            return [(0, 1.0)]
        if y < spine_y - 0.04:
            w = float(_smoothstep(y, pelvis_y + 0.04, spine_y - 0.04)) * 0.5
            return [(0, 1.0 - w), (1, w)]
        if y < neck_y - 0.06:
            w = 0.5 + 0.5 * float(_smoothstep(y, spine_y - 0.04, neck_y - 0.06))
            return [(0, 1.0 - w), (1, w)] if w < 1.0 else [(1, 1.0)]
        w = float(_smoothstep(y, neck_y - 0.06, neck_y + 0.04))
        return [(1, 1.0 - w), (2, w)] if w < 1.0 else [(2, 1.0)]

    rings = []
    for y, ax, az in zip(ys, rx, rz):
        ids = []
        for a in angles:
            pos = np.array([ax * np.cos(a), y, az * np.sin(a)])
            ids.append(b.add_vertex(pos, part, torso_weights(y)))
        rings.append(ids)
    for i in range(len(rings) - 1):
        b.connect_rings(rings[i], rings[i + 1])
    # rounded end caps
    for sign, ring_i, cap_y in ((-1.0, 0, 0.88), (1.0, len(rings) - 1, 1.50)):
        prev = rings[ring_i]
        ax, az = rx[ring_i], rz[ring_i]
        for s in range(1, 3):
            phi = s / 3 * (np.pi / 2)
            ids = []
            for a in angles:
                pos = np.array(
                    [
                        ax * np.cos(phi) * np.cos(a),
                        cap_y + sign * 0.06 * np.sin(phi),
                        az * np.cos(phi) * np.sin(a),
                    ]
                )
                ids.append(b.add_vertex(pos, part, torso_weights(cap_y)))
            if sign < 0:
                b.connect_rings(ids, prev)
            else:
                b.connect_rings(prev, ids)
            prev = ids
        apex = b.add_vertex(np.array([0.0, cap_y + sign * 0.06, 0.0]), part, torso_weights(cap_y))
        b.connect_fan(apex, prev, apex_first=sign > 0)
    b.add_ring_label("pelvis", rings[2])
    b.add_ring_label("spine", rings[6])
    b.add_ring_label("neck", rings[10])
    return part


def _head(b: _Builder, n_stack=11, n_seg=16):
    part = b.new_part("head")
    b.solids.append(("ellipsoid", (HEAD_CENTER, HEAD_RADII)))
    rings = []
    for s in range(1, n_stack):
        phi = np.pi * s / n_stack
        ids = []
        for a in np.linspace(0.0, 2 * np.pi, n_seg, endpoint=False):
            d = np.array([np.sin(phi) * np.cos(a), np.cos(phi), np.sin(phi) * np.sin(a)])
            b_pos = HEAD_CENTER + HEAD_RADII * d
            ids.append(b.add_vertex(b_pos, part, [(3, 1.0)]))
        rings.append(ids)
    top = b.add_vertex(HEAD_CENTER + HEAD_RADII * np.array([0.0, 1.0, 0.0]), part, [(3, 1.0)])
    bottom = b.add_vertex(HEAD_CENTER + HEAD_RADII * np.array([0.0, -1.0, 0.0]), part, [(3, 1.0)])
    b.connect_fan(top, rings[0], apex_first=False)
    for i in range(len(rings) - 1):
        b.connect_rings(rings[i + 1], rings[i])
    b.connect_fan(bottom, rings[-1], apex_first=True)
    b.add_ring_label("head", rings[-1])
    return part


def _point_inside_solid(p, kind, payload, margin):
    if kind == "capsule":
        p0, p1, r0, r1 = payload
        axis = p1 - p0
        t = float(np.clip((p - p0) @ axis / (axis @ axis), 0.0, 1.0))
        r = r0 + (r1 - r0) * t
        return np.linalg.norm(p - (p0 + axis * t)) < r * (1.0 - margin)
    if kind == "ellipsoid":
        c, radii = payload
        return np.sum(((p - c) / radii) ** 2) < (1.0 - margin) ** 2
    if kind == "torso":
        ys, rx, rz = payload
        if p[1] < ys[0] or p[1] > ys[-1]:
            return False
        ax = np.interp(p[1], ys, rx)
        az = np.interp(p[1], ys, rz)
        return (p[0] / ax) ** 2 + (p[2] / az) ** 2 < (1.0 - margin) ** 2
    raise ValueError(kind)


def default_model() -> BodyModel:
    """Build the standard 16-joint humanoid BodyModel."""
    b = _Builder()
    j = {name: i for i, name in enumerate(JOINT_NAMES)}

    _torso(b)
    _head(b)
    _capsule(b, "neck_part", _J["neck"] + [0, 0.0, 0], _J["head"] + [0, 0.02, 0],
             0.052, 0.05, j["neck"], j["head"], n_seg=10, n_rings=4, blend_from=0.6,
             ring_labels={"neck_top": 1.0})
    for side, dirn in (("l", _ARM_DIR_L), ("r", _ARM_DIR_R)):
        sh, el, wr = _J[f"{side}_shoulder"], _J[f"{side}_elbow"], _J[f"{side}_wrist"]
        _capsule(b, f"{side}_upper_arm", sh, el, 0.048, 0.040,
                 j[f"{side}_shoulder"], j[f"{side}_elbow"], n_seg=12, n_rings=7,
                 ring_labels={f"{side}_shoulder": 0.0, f"{side}_elbow": 1.0})
        _capsule(b, f"{side}_forearm", el, wr, 0.038, 0.031,
                 j[f"{side}_elbow"], j[f"{side}_wrist"], n_seg=11, n_rings=6,
                 ring_labels={f"{side}_wrist": 1.0})
        _capsule(b, f"{side}_hand", wr, wr + 0.09 * dirn, 0.031, 0.024,
                 j[f"{side}_wrist"], None, n_seg=9, n_rings=4)
    for side, sx in (("l", 1.0), ("r", -1.0)):
        hip, knee, ankle = _J[f"{side}_hip"], _J[f"{side}_knee"], _J[f"{side}_ankle"]
        _capsule(b, f"{side}_thigh", hip, knee, 0.080, 0.058,
                 j[f"{side}_hip"], j[f"{side}_knee"], n_seg=14, n_rings=7,
                 ring_labels={f"{side}_hip": 0.0, f"{side}_knee": 1.0})
        _capsule(b, f"{side}_shin", knee, ankle, 0.056, 0.040,
                 j[f"{side}_knee"], j[f"{side}_ankle"], n_seg=13, n_rings=7,
                 ring_labels={f"{side}_ankle": 1.0})
        _capsule(b, f"{side}_foot", ankle, np.array([sx * 0.10, 0.05, 0.16]), 0.042, 0.030,
                 j[f"{side}_ankle"], None, n_seg=10, n_rings=5)

    verts = np.array(b.verts)
    tris = np.array(b.tris)
    part_id = np.array(b.part_id)

    # drop triangles buried inside another part (keeps sampling on the union surface)
    centroids = verts[tris].mean(axis=1)
    tri_part = part_id[tris[:, 0]]
    keep = np.ones(len(tris), dtype=bool)
    for t in range(len(tris)):
        for s, (kind, payload) in enumerate(b.solids):
            if s == tri_part[t]:
                continue
            if _point_inside_solid(centroids[t], kind, payload, margin=0.02):
                keep[t] = False
                break
    tris = tris[keep]

    # prune vertices no longer referenced
    used = np.zeros(len(verts), dtype=bool)
    used[tris.reshape(-1)] = True
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    verts_kept = verts[used]
    tris = remap[tris]
    part_kept = part_id[used]
    weights_kept = [b.weights[i] for i in np.nonzero(used)[0]]

    n = len(verts_kept)
    k = len(JOINT_NAMES)
    skin_weights = np.zeros((n, k))
    for vi, pairs in enumerate(weights_kept):
        for joint, w in pairs:
            skin_weights[vi, joint] += w
    skin_weights /= skin_weights.sum(axis=1, keepdims=True)

    regressor = np.zeros((k, n))
    ring_for_joint = {
        "pelvis": "pelvis", "spine": "spine", "neck": "neck", "head": "head",
        "l_shoulder": "l_shoulder", "r_shoulder": "r_shoulder",
        "l_elbow": "l_elbow", "r_elbow": "r_elbow",
        "l_wrist": "l_wrist", "r_wrist": "r_wrist",
        "l_hip": "l_hip", "r_hip": "r_hip",
        "l_knee": "l_knee", "r_knee": "r_knee",
        "l_ankle": "l_ankle", "r_ankle": "r_ankle",
    }
    part_of_label = {
        "pelvis": "torso", "spine": "torso", "neck": "torso", "head": "head",
        **{f"{s}_{jn}": f"{s}_{pn}" for s in "lr" for jn, pn in (
            ("shoulder", "upper_arm"), ("elbow", "upper_arm"), ("wrist", "forearm"),
            ("hip", "thigh"), ("knee", "thigh"), ("ankle", "shin"))},
    }
    part_index = {name: i for i, name in enumerate(b.part_names)}
    for name, label in ring_for_joint.items():
        ids = [remap[i] for i in b.ring_sets[label] if used[i]]
        if len(ids) < 3:
            # ring was buried inside a neighboring part: fall back to the
            # nearest surviving vertices of the owning part
            owner = part_index[part_of_label[name]]
            cand = np.nonzero(part_kept == owner)[0]
            d = np.linalg.norm(verts_kept[cand] - _J[name], axis=1)
            ids = cand[np.argsort(d, kind="stable")[:12]].tolist()
        regressor[j[name], ids] = 1.0 / len(ids)

    basis = _shape_basis(verts_kept, part_kept, b.part_names)

    return BodyModel(
        template_vertices=verts_kept,
        triangles=tris,
        shape_basis=basis,
        joint_regressor=regressor,
        parent=PARENT,
        skin_weights=skin_weights,
        landmark_joints=list(range(k)),
        head_joint=j["head"],
        face_offsets=FACE_OFFSETS,
        joint_names=JOINT_NAMES,
    )


def _shape_basis(verts, part_id, part_names) -> np.ndarray:
    """10 shape directions: scale, height, torso girth, arm length, leg length,
    arm girth, leg girth, shoulder width, head size, belly."""
    n = len(verts)
    name_of = np.array([part_names[p] for p in part_id])
    is_torso = np.isin(name_of, ["torso", "neck_part"])
    is_arm = np.isin(name_of, [f"{s}_{p}" for s in "lr" for p in ("upper_arm", "forearm", "hand")])
    is_leg = np.isin(name_of, [f"{s}_{p}" for s in "lr" for p in ("thigh", "shin", "foot")])
    is_head = name_of == "head"

    basis = np.zeros((10, n, 3))
    basis[0] = 0.06 * (verts - _J["pelvis"])
    basis[1][:, 1] = 0.03 * verts[:, 1]
    basis[2][is_torso, 0] = 0.30 * verts[is_torso, 0]
    basis[2][is_torso, 2] = 0.30 * verts[is_torso, 2]

    for side, dirn in (("l", _ARM_DIR_L), ("r", _ARM_DIR_R)):
        arm_mask = np.isin(name_of, [f"{side}_upper_arm", f"{side}_forearm", f"{side}_hand"])
        sh = _J[f"{side}_shoulder"]
        t_along = np.clip((verts[arm_mask] - sh) @ dirn, 0.0, None)
        basis[3][arm_mask] = 0.08 * t_along[:, None] / 0.63 * dirn
        radial = (verts[arm_mask] - sh) - t_along[:, None] * dirn
        basis[5][arm_mask] = 0.45 * radial

    leg_axis = np.array([0.0, -1.0, 0.0])
    for side in "lr":
        leg_mask = np.isin(name_of, [f"{side}_thigh", f"{side}_shin", f"{side}_foot"])
        hip = _J[f"{side}_hip"]
        t_down = np.clip(hip[1] - verts[leg_mask, 1], 0.0, None) / hip[1]
        basis[4][leg_mask] = 0.06 * t_down[:, None] * leg_axis
        radial = verts[leg_mask] - hip
        radial = radial - (radial @ leg_axis)[:, None] * leg_axis
        basis[6][leg_mask] = 0.35 * radial

    wide = is_arm | (is_torso & (verts[:, 1] > 1.35) & (np.abs(verts[:, 0]) > 0.08))
    basis[7][wide, 0] = 0.05 * np.sign(verts[wide, 0])
    basis[8][is_head] = 0.45 * (verts[is_head] - HEAD_CENTER)
    belly_c = np.array([0.0, 1.06, 0.10])
    w_belly = np.exp(-np.sum((verts - belly_c) ** 2, axis=1) / 0.12**2) * is_torso
    basis[9][:, 2] = 0.06 * w_belly
    return basis


# -- canonical poses -----------------------------------------------------------


def pose_params(model: BodyModel, pose: str = "rest") -> BodyParams:
    """Named rest/walking/arms-raised poses with a neutral, upright head."""
    params = BodyParams.zeros(model)
    idx = {name: i for i, name in enumerate(JOINT_NAMES)}
    theta = params.theta
    if pose == "rest":
        pass
    elif pose == "walking":
        theta[idx["l_hip"]] = [-0.42, 0.0, 0.0]
        theta[idx["r_hip"]] = [0.32, 0.0, 0.0]
        theta[idx["l_knee"]] = [0.55, 0.0, 0.0]
        theta[idx["r_knee"]] = [0.18, 0.0, 0.0]
        theta[idx["l_shoulder"]] = [0.35, 0.0, 0.0]
        theta[idx["r_shoulder"]] = [-0.35, 0.0, 0.0]
        theta[idx["l_elbow"]] = [-0.30, 0.0, 0.0]
        theta[idx["r_elbow"]] = [-0.45, 0.0, 0.0]
        theta[idx["spine"]] = [0.05, 0.0, 0.0]
    elif pose == "arms_raised":
        theta[idx["l_shoulder"]] = [0.0, 0.0, 0.95]
        theta[idx["r_shoulder"]] = [0.0, 0.0, -0.95]
        theta[idx["l_elbow"]] = [0.0, 0.0, 0.25]
        theta[idx["r_elbow"]] = [0.0, 0.0, -0.25]
    else:
        raise ValueError(f"unknown pose '{pose}'")
    return BodyParams(params.beta, theta)


POSE_NAMES = ["rest", "walking", "arms_raised"]
