"""Quadric-error-metric edge-collapse decimation with part-label locking.

Collapse ordering is deterministic: candidates are popped from a heap keyed
by (cost, lower vertex index, higher vertex index). Any edge touching a part
boundary (an endpoint whose incident faces carry more than one label) is
never collapsed, so no output triangle ever spans two parts.
"""

import heapq

import numpy as np

from .mesh import TriangleMesh

FLIP_EPS = 1e-12


def decimate(mesh, rate):
    """Reduce triangle count toward ceil(|T| / rate).

    rate=1 and meshes with fewer than 4*rate triangles are returned unchanged.
    The reduction is best effort: label locking or fold-over guards may stop
    the collapse loop early, but the count never increases.
    """
    if rate is None or int(rate) != rate or rate < 1:
        raise ValueError(f"decimation rate must be a positive integer, got {rate!r}")
    rate = int(rate)
    n_faces = mesh.num_triangles
    if rate == 1 or n_faces < 4 * rate:
        return mesh
    target = -(-n_faces // rate)  # ceil
    return _qem_collapse(mesh, target)


def _face_quadric(p0, p1, p2):
    n = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(n)
    if norm < 1e-30:
        return np.zeros((4, 4))
    n = n / norm
    plane = np.array([n[0], n[1], n[2], -float(n @ p0)])
    return np.outer(plane, plane)


def _collapse_cost(quadric, pos):
    h = np.array([pos[0], pos[1], pos[2], 1.0])
    return float(h @ quadric @ h)


def _optimal_position(quadric, pu, pv):
    A = quadric[:3, :3]
    b = -quadric[:3, 3]
    # fall back to the best endpoint/midpoint when the quadric is singular
    if abs(np.linalg.det(A)) > 1e-9:
        cand = [np.linalg.solve(A, b)]
    else:
        cand = []
    cand.extend([0.5 * (pu + pv), pu, pv])
    costs = [_collapse_cost(quadric, c) for c in cand]
    best = int(np.argmin(costs))
    return cand[best], costs[best]


def _qem_collapse(mesh, target):
    verts = mesh.vertices.copy()
    faces = mesh.triangles.copy()
    labels = mesh.part_labels
    nv = len(verts)
    nf = len(faces)

    face_alive = np.ones(nf, dtype=bool)
    vert_faces = [set() for _ in range(nv)]
    for f in range(nf):
        for v in faces[f]:
            vert_faces[v].add(f)

    # a vertex is locked when its faces carry more than one part label
    vert_label = np.full(nv, -1, dtype=np.int64)
    locked = np.zeros(nv, dtype=bool)
    for v in range(nv):
        labs = {int(labels[f]) for f in vert_faces[v]}
        if len(labs) == 1:
            vert_label[v] = labs.pop()
        else:
            locked[v] = True

    quadrics = np.zeros((nv, 4, 4))
    for f in range(nf):
        i, j, k = faces[f]
        K = _face_quadric(verts[i], verts[j], verts[k])
        quadrics[i] += K
        quadrics[j] += K
        quadrics[k] += K

    version = np.zeros(nv, dtype=np.int64)
    heap = []

    def neighbors(v):
        out = set()
        for f in vert_faces[v]:
            out.update(int(x) for x in faces[f])
        out.discard(v)
        return out

    def push_edge(u, v):
        if u > v:
            u, v = v, u
        if locked[u] or locked[v] or vert_label[u] != vert_label[v]:
            return
        pos, cost = _optimal_position(quadrics[u] + quadrics[v], verts[u], verts[v])
        heapq.heappush(heap, (cost, u, v, version[u], version[v], pos[0], pos[1], pos[2]))

    seen = set()
    for f in range(nf):
        i, j, k = (int(x) for x in faces[f])
        for u, v in ((i, j), (j, k), (k, i)):
            key = (min(u, v), max(u, v))
            if key not in seen:
                seen.add(key)
                push_edge(*key)
    del seen

    alive_count = nf
    while alive_count > target and heap:
        cost, u, v, ver_u, ver_v, px, py, pz = heapq.heappop(heap)
        if version[u] != ver_u or version[v] != ver_v:
            continue
        if not vert_faces[u] or not vert_faces[v]:
            continue
        shared_faces = vert_faces[u] & vert_faces[v]
        if not shared_faces:
            continue  # edge no longer exists

        # link condition: common neighbors must be exactly the opposite
        # vertices of the shared faces, else the collapse pinches the surface
        opposite = set()
        for f in shared_faces:
            for x in faces[f]:
                if x != u and x != v:
                    opposite.add(int(x))
        if neighbors(u) & neighbors(v) != opposite:
            continue

        new_pos = np.array([px, py, pz])
        if _would_flip(u, v, shared_faces, new_pos, verts, faces, vert_faces):
            continue

        # collapse v into u, moving u to the optimal position
        verts[u] = new_pos
        quadrics[u] = quadrics[u] + quadrics[v]
        for f in shared_faces:
            face_alive[f] = False
            alive_count -= 1
            for x in faces[f]:
                vert_faces[x].discard(f)
        for f in list(vert_faces[v]):
            faces[f][faces[f] == v] = u
            vert_faces[u].add(f)
        vert_faces[v] = set()
        version[u] += 1
        version[v] += 1
        for n in sorted(neighbors(u)):
            push_edge(u, n)

    keep = np.flatnonzero(face_alive)
    used = np.unique(faces[keep])
    remap = np.full(nv, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(verts[used], remap[faces[keep]], labels[keep])


def _would_flip(u, v, shared_faces, new_pos, verts, faces, vert_faces):
    for f in (vert_faces[u] | vert_faces[v]) - shared_faces:
        i, j, k = (int(x) for x in faces[f])
        before = np.cross(verts[j] - verts[i], verts[k] - verts[i])
        ps = [new_pos if x in (u, v) else verts[x] for x in (i, j, k)]
        after = np.cross(ps[1] - ps[0], ps[2] - ps[0])
        if float(before @ after) <= FLIP_EPS:
            return True
    return False
