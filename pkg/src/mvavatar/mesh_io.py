"""Mesh file I/O: ASCII OBJ and binary little-endian PLY.

PLY stores positions as float64 and indices as uint32. OBJ uses `v`/`f` records
with 1-based indices; normals and texture data are ignored on read.
"""

from __future__ import annotations

import os

import numpy as np

from .mesh import TriMesh


def save_obj(path, mesh: TriMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path) -> TriMesh:
    vertices = []
    triangles = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(token.split("/")[0]) - 1 for token in parts[1:]]
                if len(idx) != 3:
                    raise ValueError(f"non-triangle face in {path}: {line.strip()}")
                triangles.append(idx)
    return TriMesh(np.array(vertices, dtype=float), np.array(triangles, dtype=np.int64))


def save_ply(path, mesh: TriMesh) -> None:
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar uint vertex_indices\n"
        "end_header\n"
    )
    face_dtype = np.dtype([("n", "u1"), ("idx", "<u4", (3,))])
    faces = np.empty(mesh.n_triangles, dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = mesh.triangles.astype(np.uint32)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        fh.write(faces.tobytes())


def load_ply(path) -> TriMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: missing PLY header terminator")
    header_lines = data[:end].decode("ascii").splitlines()
    if header_lines[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = n_face = None
    fmt = None
    for line in header_lines[1:]:
        parts = line.split()
        if parts[:1] == ["format"]:
            fmt = parts[1]
        elif parts[:2] == ["element", "vertex"]:
            n_vertex = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_face = int(parts[2])
    if fmt != "binary_little_endian":
        raise ValueError(f"{path}: unsupported PLY format {fmt}")
    if n_vertex is None or n_face is None:
        raise ValueError(f"{path}: missing vertex or face element")
    body = data[end + len(b"end_header\n"):]
    vert_bytes = n_vertex * 3 * 8
    vertices = np.frombuffer(body[:vert_bytes], dtype="<f8").reshape(n_vertex, 3)
    face_dtype = np.dtype([("n", "u1"), ("idx", "<u4", (3,))])
    faces = np.frombuffer(body[vert_bytes:vert_bytes + n_face * face_dtype.itemsize], dtype=face_dtype)
    if len(faces) != n_face:
        raise ValueError(f"{path}: truncated face data")
    if n_face and not np.all(faces["n"] == 3):
        raise ValueError(f"{path}: non-triangle faces present")
    return TriMesh(vertices.copy(), faces["idx"].astype(np.int64))


def save_mesh(path, mesh: TriMesh) -> None:
    """Dispatch on extension (.obj or .ply)."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        save_obj(path, mesh)
    elif ext == ".ply":
        save_ply(path, mesh)
    else:
        raise ValueError(f"unsupported mesh extension: {ext}")


def load_mesh(path) -> TriMesh:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".obj":
        return load_obj(path)
    if ext == ".ply":
        return load_ply(path)
    raise ValueError(f"unsupported mesh extension: {ext}")
