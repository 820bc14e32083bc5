"""Synthetic multi-procedure scene generator.

Five scene families stand in for five surgical procedures. Every family has
its own background texture program, instrument part shading, distractor
style and brightness band, so a vision-only model trained on four families
meets genuinely unseen appearance on the fifth. Geometry is shared: one
articulated three-part instrument whose true poses render the ground-truth
mask, while the kinematics record carries a whole-chain rigid offset (the
hand-eye/registration error model), so the rendered prior is shifted but
geometrically consistent.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as tio
from .kinematics import (
    KinematicsSample,
    KinematicsStream,
    Pose7,
    pose_compose,
    quat_from_axis_angle,
    quat_multiply,
    save_kinematics_csv,
)
from .render import CameraIntrinsics, RenderConfig, render_parts
from .shapes import chain_poses, make_instrument_mesh


@dataclass(frozen=True)
class SceneFamily:
    """One synthetic procedure. The instrument hardware is shared across all
    families (the robot does not change between procedures); what varies is
    the scene: background texture program and mean level, global illumination
    and color cast, distractor style/density, and specular activity."""

    name: str
    texture: str  # smooth | bands | speckle | gradient | mottle
    bg_level: float  # mean background gray level, 0..255
    bg_contrast: float
    tint: tuple  # per-channel background multipliers
    illumination: tuple  # global brightness range for the whole frame
    cast: tuple  # per-channel illumination cast
    occluder_density: float  # expected distractor blob count
    decoy_bias: float  # fraction of distractors styled like the instrument
    specular_rate: float  # expected specular blobs on the instrument


FAMILIES = {
    "A": SceneFamily("A", "smooth", 55, 18, (1.15, 0.78, 0.72), (0.78, 0.92), (1.0, 0.97, 0.94), 2.0, 0.35, 0.8),
    "B": SceneFamily("B", "bands", 175, 26, (1.1, 0.9, 0.85), (0.98, 1.12), (0.97, 1.0, 1.05), 3.5, 0.65, 0.4),
    "C": SceneFamily("C", "speckle", 100, 30, (0.9, 1.05, 0.9), (0.9, 1.02), (1.04, 0.98, 0.98), 4.5, 0.5, 1.4),
    "D": SceneFamily("D", "gradient", 216, 22, (1.0, 1.0, 1.0), (1.05, 1.2), (1.02, 1.02, 0.96), 2.5, 0.75, 2.2),
    "E": SceneFamily("E", "mottle", 132, 34, (0.85, 0.95, 1.12), (0.85, 0.98), (0.95, 0.99, 1.06), 3.0, 0.55, 0.6),
}

# shared instrument appearance: brushed metal with per-part brightness steps
PART_LEVELS = (150.0, 185.0, 215.0)  # base, wrist, tip
PART_TINT = (1.0, 1.0, 1.02)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    deviation: float = 1.0  # scales the kinematics offset; 0 disables it
    max_rotation_deg: float = 5.0
    frame_rate_fps: float = 0.5
    kin_rate_hz: float = 5.0

    def intrinsics(self):
        s = self.image_size
        return CameraIntrinsics(1.1 * s, 1.1 * s, s / 2, s / 2, s, s, 1.0)


@dataclass(frozen=True, eq=False)
class SceneSample:
    image: np.ndarray  # (3, H, W) uint8
    gt_mask: np.ndarray  # (H, W) uint8 labels
    kin: KinematicsSample  # perturbed chain poses plus camera
    true_poses: tuple
    family: str
    seed: int


_mesh_cache = {}


def instrument_mesh():
    if "mesh" not in _mesh_cache:
        _mesh_cache["mesh"] = make_instrument_mesh()
    return _mesh_cache["mesh"]


def _sample_chain(rng, cfg, intr):
    """Reachable instrument pose with the tip visible for nearly every draw."""
    size = cfg.image_size
    for _ in range(40):
        depth = rng.uniform(105.0, 165.0)
        half_extent = 0.5 * depth * size / intr.fx
        side = rng.integers(0, 4)
        angle_in = rng.uniform(-0.5, 0.5)
        # base axis points inward from the entry side, lying roughly in-plane
        yaw = {0: 0.0, 1: np.pi, 2: np.pi / 2, 3: -np.pi / 2}[int(side)] + angle_in
        q = quat_multiply(
            quat_from_axis_angle([0, 1, 0], np.pi / 2),  # +z axis -> +x
            quat_from_axis_angle([1, 0, 0], rng.uniform(-0.25, 0.25)),
        )
        q = quat_multiply(quat_from_axis_angle([0, 0, 1], yaw), q)
        margin = 0.82 * half_extent
        entry = {
            0: (-margin, rng.uniform(-0.5, 0.5) * half_extent),
            1: (margin, rng.uniform(-0.5, 0.5) * half_extent),
            2: (rng.uniform(-0.5, 0.5) * half_extent, -margin),
            3: (rng.uniform(-0.5, 0.5) * half_extent, margin),
        }[int(side)]
        base = Pose7(np.array([entry[0], entry[1], depth]), q)
        poses = chain_poses(
            base,
            rng.uniform(-0.45, 0.45),
            rng.uniform(-0.4, 0.4),
            rng.uniform(-0.35, 0.35),
        )
        tip_pos = poses[2].position
        if tip_pos[2] < 60:
            continue
        u = intr.fx * tip_pos[0] / tip_pos[2] + intr.cx
        v = intr.fy * tip_pos[1] / tip_pos[2] + intr.cy
        pad = 0.14 * size
        if pad <= u < size - pad and pad <= v < size - pad:
            return poses
    return poses  # rare: accept the last draw, tip may be clipped


def _perturb_chain(rng, cfg, poses, intr):
    """One rigid world offset for the whole chain (registration error model)."""
    if cfg.deviation == 0.0:
        return poses
    depth = poses[0].position[2]
    extent = depth * cfg.image_size / intr.fx
    # one severity scalar couples shift and rotation so their compound image
    # offset stays visibly wrong but geometrically usable; the shift is
    # bounded by 5% of the visible extent and the rotation by 5 degrees
    severity = rng.uniform(0.0, 1.0)
    mag = (0.008 + 0.020 * severity) * extent * cfg.deviation
    theta = rng.uniform(0, 2 * np.pi)
    shift = np.array([mag * np.cos(theta), mag * np.sin(theta), rng.uniform(-1, 1) * 0.008 * extent])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = (0.15 + 0.65 * severity) * np.deg2rad(cfg.max_rotation_deg) * min(cfg.deviation, 1.0)
    # rotate about the wrist so the offset stays a plausible registration error
    pivot = poses[1].position
    offset = pose_compose(
        Pose7(pivot, np.array([1.0, 0, 0, 0])),
        pose_compose(
            Pose7(np.zeros(3), quat_from_axis_angle(axis, angle)),
            Pose7(-pivot + shift, np.array([1.0, 0, 0, 0])),
        ),
    )
    return tuple(pose_compose(offset, p) for p in poses)


def _coarse_noise(rng, size, cells):
    grid = rng.uniform(0.0, 1.0, size=(cells, cells))
    reps = int(np.ceil(size / cells))
    big = np.kron(grid, np.ones((reps, reps)))[:size, :size]
    # two box-blur passes smooth the cell seams
    for _ in range(2):
        big = (
            big
            + np.roll(big, 1, 0) + np.roll(big, -1, 0)
            + np.roll(big, 1, 1) + np.roll(big, -1, 1)
        ) / 5.0
    return big


def _background(rng, fam, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    if fam.texture == "smooth":
        field = 0.7 * _coarse_noise(rng, size, 6) + 0.3 * _coarse_noise(rng, size, 16)
    elif fam.texture == "bands":
        phase = rng.uniform(0, 2 * np.pi)
        k = rng.uniform(4.0, 7.0)
        field = 0.5 + 0.35 * np.sin(2 * np.pi * k * (0.6 * xx + 0.4 * yy) + phase)
        field += 0.25 * _coarse_noise(rng, size, 12)
    elif fam.texture == "speckle":
        field = 0.5 * _coarse_noise(rng, size, 8)
        for _ in range(26):
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(1.5, 4.0)
            d2 = (np.arange(size)[:, None] - cy) ** 2 + (np.arange(size)[None, :] - cx) ** 2
            field += 0.45 * np.exp(-d2 / (2 * r * r)) * rng.choice([-1.0, 1.0])
        field = np.clip(field + 0.4, 0, 1.2)
    elif fam.texture == "gradient":
        gx, gy = rng.uniform(-1, 1, 2)
        field = 0.55 + 0.4 * (gx * (xx - 0.5) + gy * (yy - 0.5))
        field += 0.15 * _coarse_noise(rng, size, 10)
    else:  # mottle
        field = 0.45 * _coarse_noise(rng, size, 24) + 0.4 * _coarse_noise(rng, size, 12) + 0.15 * rng.uniform(0, 1, (size, size))
    field = np.clip(field, 0, None)
    level = fam.bg_level + fam.bg_contrast * (field - field.mean()) / max(field.std(), 1e-6)
    rgb = np.stack([np.clip(level * t, 0, 255) for t in fam.tint])
    return rgb


def _draw_blob(img, rng, size, color, elongated):
    cy, cx = rng.uniform(0.1 * size, 0.9 * size, 2)
    theta = rng.uniform(0, np.pi)
    a = rng.uniform(0.04, 0.16) * size * (2.2 if elongated else 1.0)
    b = rng.uniform(0.02, 0.07) * size
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    d2 = (u / a) ** 2 + (v / b) ** 2
    alpha = 0.85 * np.exp(-(d2**1.5))
    alpha[d2 > 4.0] = 0.0
    for c in range(3):
        img[c] = img[c] * (1 - alpha) + color[c] * alpha
    return d2 <= 1.0


def gen_scene(seed, family, cfg=None):
    """Deterministic scene: identical seed gives a bit-identical sample."""
    cfg = cfg or SynthConfig()
    fam = FAMILIES[family] if isinstance(family, str) else family
    rng = np.random.default_rng([int(seed), ord(fam.name[0])])
    intr = cfg.intrinsics()
    size = cfg.image_size
    mesh = instrument_mesh()

    true_poses = _sample_chain(rng, cfg, intr)
    gt = render_parts(mesh, true_poses, Pose7.identity(), intr, RenderConfig(1, 1)).labels

    img = _background(rng, fam, size)

    # distractors: family-styled blobs, a share of them instrument look-alikes
    n_blobs = int(rng.poisson(fam.occluder_density))
    for _ in range(n_blobs):
        if rng.uniform() < fam.decoy_bias:
            level = PART_LEVELS[int(rng.integers(0, 3))] * rng.uniform(0.9, 1.1)
            color = np.array([level * t for t in PART_TINT])
            elongated = True  # decoys mimic the elongated tool segments
        else:
            color = np.full(3, fam.bg_level * rng.uniform(0.4, 1.5))
            elongated = rng.uniform() < 0.4
        _draw_blob(img, rng, size, np.clip(color, 0, 255), elongated=elongated)

    # instrument: shared metal appearance, mild per-sample jitter + shading
    yy = np.arange(size)[:, None] / size
    shade = 1.0 + 0.22 * (yy - 0.5)
    jitter = rng.uniform(0.93, 1.07)
    for k, level in enumerate(PART_LEVELS, start=1):
        region = gt == k
        for c in range(3):
            img[c] = np.where(region, np.clip(level * PART_TINT[c] * jitter * shade, 0, 255), img[c])

    # specular highlights on the instrument
    n_spec = int(rng.poisson(fam.specular_rate))
    fg = gt > 0
    if fg.any():
        ys, xs = np.nonzero(fg)
        for _ in range(n_spec):
            j = int(rng.integers(0, len(ys)))
            cy, cx = ys[j], xs[j]
            r = rng.uniform(1.0, 2.5)
            d2 = (np.arange(size)[:, None] - cy) ** 2 + (np.arange(size)[None, :] - cx) ** 2
            glare = np.exp(-d2 / (2 * r * r))
            for c in range(3):
                img[c] = img[c] + (255 - img[c]) * glare * 0.8

    # family illumination: global brightness plus a color cast
    brightness = rng.uniform(*fam.illumination)
    img = img * brightness * np.asarray(fam.cast)[:, None, None]
    img = img + rng.normal(0, 5.0, size=(3, size, size))
    image = np.clip(img, 0, 255).astype(np.uint8)

    kin_poses = _perturb_chain(rng, cfg, true_poses, intr)
    frame_t = float(seed % 1000) / cfg.frame_rate_fps
    kin = KinematicsSample(frame_t, (tuple(kin_poses),), Pose7.identity())
    return SceneSample(image, gt, kin, tuple(true_poses), fam.name, int(seed))


def render_prior(sample, cfg=None, render_cfg=None):
    """Rendered kinematics mask R for a scene (the model's second input)."""
    cfg = cfg or SynthConfig()
    render_cfg = render_cfg or RenderConfig(scale=2, decimation_rate=10)
    return render_parts(
        instrument_mesh(), sample.kin.instruments[0], sample.kin.camera,
        cfg.intrinsics(), render_cfg,
    )


def sample_seed(base_seed, family_index, index):
    return int(base_seed) * 1_000_003 + family_index * 10_007 + index


def gen_dataset(families, per_family, cfg, out_dir, base_seed=0):
    """Write images, masks and kinematics logs plus a manifest.

    Layout: <out_dir>/<family>/<seed>.{ppm,pgm,kin.csv} and manifest.csv with
    (family, seed, image, mask, kin) rows; paths are manifest-relative.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for fi, family in enumerate(families):
        fam_dir = out_dir / family
        fam_dir.mkdir(exist_ok=True)
        for i in range(per_family):
            seed = sample_seed(base_seed, fi, i)
            sample = gen_scene(seed, family, cfg)
            stem = f"{seed}"
            img_path = fam_dir / f"{stem}.ppm"
            mask_path = fam_dir / f"{stem}.pgm"
            kin_path = fam_dir / f"{stem}.kin.csv"
            try:
                tio.write_ppm(img_path, np.transpose(sample.image, (1, 2, 0)))
                tio.write_pgm(mask_path, sample.gt_mask)
                save_kinematics_csv(kin_path, KinematicsStream((sample.kin,), cfg.kin_rate_hz))
            except OSError as exc:
                raise IOError(f"failed writing sample files under {fam_dir}: {exc}") from exc
            rows.append(
                {
                    "family": family,
                    "seed": seed,
                    "image": f"{family}/{stem}.ppm",
                    "mask": f"{family}/{stem}.pgm",
                    "kin": f"{family}/{stem}.kin.csv",
                }
            )
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["family", "seed", "image", "mask", "kin"])
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def load_manifest(manifest_path):
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = []
    with open(manifest_path, newline="") as f:
        for row in csv.DictReader(f):
            records.append(
                {
                    "family": row["family"],
                    "seed": int(row["seed"]),
                    "image": root / row["image"],
                    "mask": root / row["mask"],
                    "kin": root / row["kin"],
                }
            )
    if not records:
        raise ValueError(f"{manifest_path}: empty manifest")
    return records
