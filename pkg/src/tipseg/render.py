"""Silhouette rendering: pinhole projection, z-buffer label rasterization,
and the scaled/decimated rendering pipeline with its benchmark harness.

Pixel (u, v) samples at (u+0.5, v+0.5); shared-edge ties follow the top-left
rule; no backface culling (open meshes must still silhouette). Depth is
perspective-correct interpolated camera z, nearer wins, exact ties go to the
earlier triangle in input order.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decimate import decimate
from .kinematics import pose_compose, pose_inverse
from .mesh import split_by_part, transform_mesh


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near_clip: float = 1.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.near_clip <= 0:
            raise ValueError("near_clip must be positive")

    def scaled(self, s):
        if self.width % s or self.height % s:
            raise ValueError(f"image {self.width}x{self.height} not divisible by scale {s}")
        return CameraIntrinsics(
            self.fx / s, self.fy / s, self.cx / s, self.cy / s,
            self.width // s, self.height // s, self.near_clip,
        )

    @staticmethod
    def from_config(values):
        return CameraIntrinsics(
            fx=float(values["fx"]),
            fy=float(values["fy"]),
            cx=float(values["cx"]),
            cy=float(values["cy"]),
            width=int(values["width"]),
            height=int(values["height"]),
            near_clip=float(values.get("near_clip", 1.0)),
        )


@dataclass(frozen=True, eq=False)
class LabelMask:
    labels: np.ndarray  # (H, W) uint8 of part codes 0..3

    def __post_init__(self):
        grid = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if grid.ndim != 2:
            raise ValueError(f"label grid must be 2D, got shape {grid.shape}")
        if grid.size and grid.max() > 3:
            raise ValueError("label codes must be in 0..3")
        object.__setattr__(self, "labels", grid)
        grid.setflags(write=False)

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def height(self):
        return self.labels.shape[0]


@dataclass(frozen=True)
class RenderConfig:
    scale: int = 1
    decimation_rate: int = 1
    near_clip: float = 1.0

    def __post_init__(self):
        if self.scale < 1 or int(self.scale) != self.scale:
            raise ValueError("scale must be a positive integer")
        if self.decimation_rate < 1 or int(self.decimation_rate) != self.decimation_rate:
            raise ValueError("decimation_rate must be a positive integer")


def project(intr, p_cam):
    """Pinhole projection of a camera-frame point; z must clear the near plane."""
    p_cam = np.asarray(p_cam, dtype=np.float64)
    if p_cam[2] <= intr.near_clip:
        raise BehindCameraError(f"point z={p_cam[2]} behind near plane {intr.near_clip}")
    return np.array(
        [intr.fx * p_cam[0] / p_cam[2] + intr.cx, intr.fy * p_cam[1] / p_cam[2] + intr.cy]
    )


class BehindCameraError(ValueError):
    pass


def _clip_triangle_near(p0, p1, p2, near):
    """Sutherland-Hodgman clip of one triangle against z >= near.

    Returns a list of triangles (0, 1 or 2) as vertex triples.
    """
    poly = [p0, p1, p2]
    out = []
    for i in range(3):
        a, b = poly[i], poly[(i + 1) % 3]
        ain, bin_ = a[2] >= near, b[2] >= near
        if ain:
            out.append(a)
        if ain != bin_:
            t = (near - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    if len(out) < 3:
        return []
    return [(out[0], out[i], out[i + 1]) for i in range(1, len(out) - 1)]


def rasterize(meshes, intr):
    """Label mask of the front-most triangle per pixel center.

    `meshes` are TriangleMesh instances already in camera coordinates
    (z forward). Empty input gives an all-background mask.
    """
    corners = []  # (n, 3, 3) camera-frame triangle corners, input order kept
    labs = []
    for mesh in meshes:
        if mesh.num_triangles == 0:
            continue
        tri = mesh.vertices[mesh.triangles]  # (m, 3, 3)
        needs_clip = tri[:, :, 2].min(axis=1) < intr.near_clip
        if not needs_clip.any():
            corners.append(tri)
            labs.append(mesh.part_labels)
        else:
            # rare slow path; keeps input order for depth tie-breaking
            for f in range(mesh.num_triangles):
                label = mesh.part_labels[f : f + 1]
                if not needs_clip[f]:
                    corners.append(tri[f : f + 1])
                    labs.append(label)
                    continue
                for clipped in _clip_triangle_near(*tri[f], intr.near_clip):
                    corners.append(np.asarray(clipped)[None])
                    labs.append(label)
    if not corners:
        return LabelMask(np.zeros((intr.height, intr.width), dtype=np.uint8))

    tri = np.concatenate(corners, axis=0)
    labels = np.concatenate(labs).astype(np.uint8)
    z = tri[:, :, 2]
    xs = intr.fx * tri[:, :, 0] / z + intr.cx
    ys = intr.fy * tri[:, :, 1] / z + intr.cy
    iz = 1.0 / z
    # orientation-normalize so interior edge values are positive
    area2 = (xs[:, 1] - xs[:, 0]) * (ys[:, 2] - ys[:, 0]) - (ys[:, 1] - ys[:, 0]) * (
        xs[:, 2] - xs[:, 0]
    )
    flip = area2 < 0
    xs[flip, 1], xs[flip, 2] = xs[flip, 2], xs[flip, 1].copy()
    ys[flip, 1], ys[flip, 2] = ys[flip, 2], ys[flip, 1].copy()
    iz[flip, 1], iz[flip, 2] = iz[flip, 2], iz[flip, 1].copy()
    area2 = np.abs(area2)
    keep = area2 > 0
    if not keep.all():
        xs, ys, iz, labels, area2 = xs[keep], ys[keep], iz[keep], labels[keep], area2[keep]
    if len(labels) == 0:
        return LabelMask(np.zeros((intr.height, intr.width), dtype=np.uint8))
    grid = kernels.raster_fill(
        np.ascontiguousarray(xs), np.ascontiguousarray(ys), np.ascontiguousarray(iz),
        np.ascontiguousarray(labels), np.ascontiguousarray(area2), intr.width, intr.height,
    )
    return LabelMask(grid)


def upsample_nearest(mask, s):
    """Duplicate every cell s x s (nearest-neighbor; never invents labels)."""
    if s == 1:
        return mask
    return LabelMask(np.repeat(np.repeat(mask.labels, s, axis=0), s, axis=1))


def _decimated(mesh, rate):
    # memoized on the mesh object itself: meshes are immutable and the same
    # instrument model is re-rendered every frame
    cache = getattr(mesh, "_decimated_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(mesh, "_decimated_cache", cache)
    if rate not in cache:
        cache[rate] = decimate(mesh, rate)
    return cache[rate]


def pose_parts_to_camera(mesh, instrument_poses, camera):
    """Place each labeled part by its own pose, then move into the camera frame."""
    cam_from_world = pose_inverse(camera)
    posed = []
    by_part = split_by_part(mesh)
    for part, sub in by_part.items():
        pose = instrument_poses[part - 1]  # part ids 1..3 onto (base, wrist, tip)
        posed.append(transform_mesh(sub, pose_compose(cam_from_world, pose)))
    return posed


def render_parts(mesh, instrument_poses, camera, intr, cfg):
    """Silhouette pipeline: decimate, pose parts, render at 1/s scale with
    scaled intrinsics, then nearest-neighbor upsample to full resolution."""
    intr = CameraIntrinsics(
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, cfg.near_clip
    )
    small = intr.scaled(cfg.scale)
    lean = _decimated(mesh, cfg.decimation_rate)
    posed = pose_parts_to_camera(lean, instrument_poses, camera)
    low = rasterize(posed, small)
    return upsample_nearest(low, cfg.scale)


@dataclass
class BenchmarkRow:
    config: RenderConfig
    median_ms: float
    fps: float
    speedup: float
    iou: dict = field(default_factory=dict)  # part name -> IoU vs reference mask
    mask: LabelMask = None


def benchmark_render(mesh, instrument_poses, camera, intr, configs, repeats=5):
    """Time each config against the (scale=1, rate=1) reference.

    Decimation is amortized: meshes are decimated once per config before the
    timed loop, matching the intended use of a fixed lightweight mesh across
    frames. Masks must be identical across repeats.
    """
    if repeats < 3:
        raise ValueError("benchmark needs at least 3 repeats")
    reference_cfg = RenderConfig(1, 1, configs[0].near_clip if configs else 1.0)
    ref_mask, ref_ms = _time_config(mesh, instrument_poses, camera, intr, reference_cfg, repeats)

    rows = []
    for cfg in configs:
        mask, ms = _time_config(mesh, instrument_poses, camera, intr, cfg, repeats)
        ious = {}
        for part, name in ((1, "base"), (2, "wrist"), (3, "tip")):
            ious[name] = _mask_iou(mask.labels, ref_mask.labels, part)
        rows.append(
            BenchmarkRow(cfg, ms, 1000.0 / ms if ms > 0 else float("inf"), ref_ms / ms if ms > 0 else float("inf"), ious, mask)
        )
    return rows, ref_ms


def _time_config(mesh, instrument_poses, camera, intr, cfg, repeats):
    lean = _decimated(mesh, cfg.decimation_rate)
    small = CameraIntrinsics(
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, cfg.near_clip
    ).scaled(cfg.scale)
    mask = None
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        posed = pose_parts_to_camera(lean, instrument_poses, camera)
        low = rasterize(posed, small)
        out = upsample_nearest(low, cfg.scale)
        times.append(time.perf_counter() - t0)
        if mask is not None and not np.array_equal(mask.labels, out.labels):
            raise AssertionError("render must be deterministic across repeats")
        mask = out
    return mask, float(np.median(times) * 1000.0)


def _mask_iou(pred, ref, part):
    p = pred == part
    g = ref == part
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)
