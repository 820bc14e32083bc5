"""Procedural meshes: primitives for fixtures plus the synthetic instrument.

The instrument is a three-part articulated chain. Each part's geometry lives
in its own local frame with the part extending along +z from the origin, so
a part is placed in the world by its own pose and consecutive parts connect
when the poses come from `chain_poses`.
"""

import numpy as np

from .kinematics import Pose7, pose_compose, quat_from_axis_angle
from .mesh import PartId, TriangleMesh, merge_meshes, transform_mesh

BASE_LENGTH = 60.0
WRIST_LENGTH = 20.0
TIP_LENGTH = 30.0
BASE_RADIUS = 7.0
WRIST_RADIUS = 5.5


def make_box(size, label, center=(0.0, 0.0, 0.0)):
    sx, sy, sz = (0.5 * s for s in size)
    cx, cy, cz = center
    verts = np.array(
        [
            [cx - sx, cy - sy, cz - sz],
            [cx + sx, cy - sy, cz - sz],
            [cx + sx, cy + sy, cz - sz],
            [cx - sx, cy + sy, cz - sz],
            [cx - sx, cy - sy, cz + sz],
            [cx + sx, cy - sy, cz + sz],
            [cx + sx, cy + sy, cz + sz],
            [cx - sx, cy + sy, cz + sz],
        ]
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom
            [4, 5, 6], [4, 6, 7],  # top
            [0, 1, 5], [0, 5, 4],
            [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6],
            [3, 0, 4], [3, 4, 7],
        ]
    )
    return TriangleMesh(verts, faces, np.full(len(faces), int(label), dtype=np.uint8))


def make_uv_sphere(radius, label, rows=50, cols=100, center=(0.0, 0.0, 0.0)):
    """Latitude-longitude sphere with 2*rows*cols - 2*cols triangles."""
    center = np.asarray(center, dtype=np.float64)
    verts = [center + np.array([0.0, 0.0, radius])]
    for r in range(1, rows):
        phi = np.pi * r / rows
        for c in range(cols):
            theta = 2 * np.pi * c / cols
            verts.append(
                center
                + radius
                * np.array(
                    [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
                )
            )
    verts.append(center + np.array([0.0, 0.0, -radius]))
    south = len(verts) - 1

    def ring(r, c):
        return 1 + (r - 1) * cols + (c % cols)

    faces = []
    for c in range(cols):
        faces.append([0, ring(1, c), ring(1, c + 1)])
    for r in range(1, rows - 1):
        for c in range(cols):
            a, b = ring(r, c), ring(r, c + 1)
            d, e = ring(r + 1, c), ring(r + 1, c + 1)
            faces.append([a, d, e])
            faces.append([a, e, b])
    for c in range(cols):
        faces.append([south, ring(rows - 1, c + 1), ring(rows - 1, c)])
    faces = np.asarray(faces, dtype=np.int64)
    return TriangleMesh(np.asarray(verts), faces, np.full(len(faces), int(label), dtype=np.uint8))


def make_prism(radius, length, label, sides=12, segments=1, taper=1.0):
    """Closed prism along +z from z=0 to z=length; taper scales the far radius."""
    rings = []
    for s in range(segments + 1):
        t = s / segments
        r = radius * (1.0 + (taper - 1.0) * t)
        z = length * t
        rings.append([(r * np.cos(a), r * np.sin(a), z) for a in np.linspace(0, 2 * np.pi, sides, endpoint=False)])
    verts = [v for ring in rings for v in ring]
    verts.append((0.0, 0.0, 0.0))
    verts.append((0.0, 0.0, length))
    c0 = len(verts) - 2
    c1 = len(verts) - 1

    def vid(s, k):
        return s * sides + (k % sides)

    faces = []
    for s in range(segments):
        for k in range(sides):
            a, b = vid(s, k), vid(s, k + 1)
            c, d = vid(s + 1, k), vid(s + 1, k + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    for k in range(sides):
        faces.append([c0, vid(0, k + 1), vid(0, k)])
        faces.append([c1, vid(segments, k), vid(segments, k + 1)])
    faces = np.asarray(faces, dtype=np.int64)
    return TriangleMesh(
        np.asarray(verts, dtype=np.float64), faces, np.full(len(faces), int(label), dtype=np.uint8)
    )


def make_instrument_mesh(sides=14, segments=3):
    """Three labeled parts, each in its own local frame (see module docstring)."""
    base = make_prism(BASE_RADIUS, BASE_LENGTH, PartId.BASE, sides=sides, segments=segments)
    wrist = make_prism(
        WRIST_RADIUS, WRIST_LENGTH, PartId.WRIST, sides=sides, segments=segments, taper=0.85
    )
    jaw_len = TIP_LENGTH
    jaw = make_box((5.0, 8.0, jaw_len), PartId.TIP, center=(0.0, 0.0, jaw_len / 2))
    jaws = []
    for sign in (-1.0, 1.0):
        spread = Pose7(
            np.array([sign * 3.2, 0.0, 0.0]),
            quat_from_axis_angle([0, 1, 0], sign * 0.3),
        )
        jaws.append(transform_mesh(jaw, spread))
    tip = merge_meshes(jaws)
    return merge_meshes([base, wrist, tip])


def make_dense_instrument_mesh(min_triangles=10000):
    """Instrument tessellated until it carries at least `min_triangles`."""
    sides, segments = 14, 3
    mesh = make_instrument_mesh(sides, segments)
    while mesh.num_triangles < min_triangles:
        sides = int(sides * 1.5) + 1
        segments += 2
        mesh = _dense_instrument(sides, segments)
    return mesh


def _dense_instrument(sides, segments):
    base = make_prism(BASE_RADIUS, BASE_LENGTH, PartId.BASE, sides=sides, segments=segments)
    wrist = make_prism(WRIST_RADIUS, WRIST_LENGTH, PartId.WRIST, sides=sides, segments=segments, taper=0.85)
    tip = make_prism(4.6, TIP_LENGTH, PartId.TIP, sides=sides, segments=segments, taper=0.6)
    jaws = []
    for sign in (-1.0, 1.0):
        spread = Pose7(
            np.array([sign * 3.2, 0.0, 0.0]),
            quat_from_axis_angle([0, 1, 0], sign * 0.3),
        )
        jaws.append(transform_mesh(tip, spread))
    return merge_meshes([base, wrist, merge_meshes(jaws)])


def chain_poses(base_pose, wrist_bend, wrist_swing, tip_bend):
    """World poses (base, wrist, tip) for joint angles in radians.

    The wrist attaches at the far end of the base and bends about local x and
    y; the tip attaches at the far end of the wrist and bends about local x.
    """
    to_wrist = Pose7(
        np.array([0.0, 0.0, BASE_LENGTH]),
        quat_from_axis_angle([1, 0, 0], wrist_bend),
    )
    swing = Pose7(np.zeros(3), quat_from_axis_angle([0, 1, 0], wrist_swing))
    to_tip = Pose7(
        np.array([0.0, 0.0, WRIST_LENGTH]),
        quat_from_axis_angle([1, 0, 0], tip_bend),
    )
    wrist_pose = pose_compose(pose_compose(base_pose, to_wrist), swing)
    tip_pose = pose_compose(wrist_pose, to_tip)
    return base_pose, wrist_pose, tip_pose
