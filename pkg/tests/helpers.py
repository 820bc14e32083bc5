"""Shared test oracles, independent of the production code paths."""

import numpy as np


def oracle_rasterize(meshes, intr):
    """Independent brute-force rasterizer: every pixel center is tested
    against every triangle with edge functions; minimum depth wins, exact
    ties go to the earlier triangle. Pixel-major, no z-buffer."""
    tris = []
    for mesh in meshes:
        v = mesh.vertices
        for f in range(mesh.num_triangles):
            i, j, k = mesh.triangles[f]
            tris.append(((v[i], v[j], v[k]), int(mesh.part_labels[f])))
    prepared = []
    for corners, label in tris:
        proj = []
        for p in corners:
            z = p[2]
            proj.append((intr.fx * p[0] / z + intr.cx, intr.fy * p[1] / z + intr.cy, 1.0 / z))
        (x0, y0, z0), (x1, y1, z1), (x2, y2, z2) = proj
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 < 0:
            (x1, y1, z1), (x2, y2, z2) = (x2, y2, z2), (x1, y1, z1)
            area2 = abs(area2)
        if area2 == 0:
            continue
        prepared.append(((x0, y0, z0), (x1, y1, z1), (x2, y2, z2), area2, label))

    def top_left(ax, ay, bx, by):
        dx, dy = bx - ax, by - ay
        return dy < 0.0 or (dy == 0.0 and dx > 0.0)

    out = np.zeros((intr.height, intr.width), dtype=np.uint8)
    for row in range(intr.height):
        py = row + 0.5
        for col in range(intr.width):
            px = col + 0.5
            best = 0.0
            lab = 0
            for (x0, y0, iz0), (x1, y1, iz1), (x2, y2, iz2), area2, label in prepared:
                w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                if not (w0 > 0.0 or (w0 == 0.0 and top_left(x1, y1, x2, y2))):
                    continue
                w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                if not (w1 > 0.0 or (w1 == 0.0 and top_left(x2, y2, x0, y0))):
                    continue
                w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if not (w2 > 0.0 or (w2 == 0.0 and top_left(x0, y0, x1, y1))):
                    continue
                inv = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area2
                if inv > best:
                    best = inv
                    lab = label
            out[row, col] = lab
    return out


def random_front_scene(rng, max_triangles=20, spread=40.0, zmin=5.0, zmax=60.0):
    """Random triangles strictly in front of the camera (no clipping)."""
    from tipseg.mesh import TriangleMesh

    n = int(rng.integers(1, max_triangles + 1))
    verts = np.empty((n * 3, 3))
    verts[:, 0] = rng.uniform(-spread, spread, n * 3)
    verts[:, 1] = rng.uniform(-spread, spread, n * 3)
    verts[:, 2] = rng.uniform(zmin, zmax, n * 3)
    faces = np.arange(n * 3).reshape(n, 3)
    labels = rng.integers(1, 4, n).astype(np.uint8)
    return TriangleMesh(verts, faces, labels)
