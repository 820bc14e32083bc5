"""Labeled triangle meshes: OBJ loading, part labels, rigid transforms."""

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .kinematics import pose_apply_many

DEGENERATE_AREA = 1e-12  # mm^2, triangles thinner than this are dropped at load


class PartId(IntEnum):
    BACKGROUND = 0
    BASE = 1
    WRIST = 2
    TIP = 3


PART_BY_NAME = {"base": PartId.BASE, "wrist": PartId.WRIST, "tip": PartId.TIP}


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertices (N,3) in mm, triangles (M,3) vertex indices, per-triangle part labels (M,)."""

    vertices: np.ndarray
    triangles: np.ndarray
    part_labels: np.ndarray

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        labels = np.ascontiguousarray(self.part_labels, dtype=np.uint8)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {verts.shape}")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError(f"triangles must be (M, 3), got {tris.shape}")
        if labels.shape != (tris.shape[0],):
            raise ValueError("part_labels must have one entry per triangle")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ValueError("triangle vertex index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "part_labels", labels)
        for arr in (verts, tris, labels):
            arr.setflags(write=False)

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def labels_present(self):
        return sorted(set(int(v) for v in self.part_labels))


def triangle_areas(mesh):
    v = mesh.vertices
    t = mesh.triangles
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def load_mesh(path):
    """Parse the OBJ subset: `v x y z`, `f i j k` (1-based), `g`/`usemtl` names
    assigning subsequent faces to base/wrist/tip (case-insensitive).

    Duplicate vertex positions are merged and zero-area triangles dropped.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValueError(f"cannot read mesh file {path}: {exc}") from exc

    verts = []
    faces = []
    labels = []
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) < 3:
                raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
            verts.append([float(c) for c in rest[:3]])
        elif tag == "f":
            if len(rest) != 3:
                raise ValueError(f"{path}:{lineno}: only triangle faces supported")
            if current is None:
                raise ValueError(f"{path}:{lineno}: face before any part group")
            idx = [int(tok.split("/")[0]) for tok in rest]
            if any(i < 1 or i > len(verts) for i in idx):
                raise ValueError(f"{path}:{lineno}: face index out of range")
            faces.append([i - 1 for i in idx])
            labels.append(current)
        elif tag in ("g", "usemtl"):
            if not rest:
                raise ValueError(f"{path}:{lineno}: {tag} requires a name")
            name = rest[0].lower()
            if name not in PART_BY_NAME:
                raise ValueError(
                    f"{path}:{lineno}: unknown part group {rest[0]!r} "
                    f"(expected one of base, wrist, tip)"
                )
            current = int(PART_BY_NAME[name])
        # other OBJ tags (vn, vt, s, o, mtllib) are ignored
    if not faces:
        raise ValueError(f"{path}: no faces found")

    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.uint8)

    # merge duplicate vertex positions
    uniq, remap = np.unique(verts, axis=0, return_inverse=True)
    faces = remap[faces]

    mesh = TriangleMesh(uniq, faces, labels)
    areas = triangle_areas(mesh)
    keep = areas > DEGENERATE_AREA
    if not keep.any():
        raise ValueError(f"{path}: all triangles are degenerate")
    if not keep.all():
        mesh = TriangleMesh(uniq, faces[keep], labels[keep])
    return mesh


def transform_mesh(mesh, pose):
    """Apply a rigid pose to every vertex; topology and labels unchanged."""
    return TriangleMesh(pose_apply_many(pose, mesh.vertices), mesh.triangles, mesh.part_labels)


def split_by_part(mesh):
    """Per-part submeshes as {part_id: TriangleMesh}; shared vertices duplicated."""
    out = {}
    for part in mesh.labels_present():
        sel = mesh.part_labels == part
        tris = mesh.triangles[sel]
        used = np.unique(tris)
        remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        out[part] = TriangleMesh(
            mesh.vertices[used], remap[tris], mesh.part_labels[sel]
        )
    return out


def merge_meshes(meshes):
    """Concatenate meshes into one (vertices offset, labels preserved)."""
    verts = []
    tris = []
    labels = []
    offset = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        labels.append(m.part_labels)
        offset += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), np.concatenate(labels))
