"""Rigid poses, kinematics streams, and nearest-timestamp frame matching.

Conventions: quaternion component order is (w, x, y, z); positions are in
millimeters and timestamps in seconds. Poses are world-frame; the camera
pose maps camera coordinates into the world, so rendering uses its inverse.
"""

from dataclasses import dataclass, field

import numpy as np

PART_NAMES = ("base", "wrist", "tip")
CAMERA_PART_ID = -1


def quat_normalize(q):
    """Normalize (w,x,y,z); norms outside [0.5, 2.0] are rejected as corrupt."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quaternion has non-finite components")
    norm = float(np.linalg.norm(q))
    if not 0.5 <= norm <= 2.0:
        raise ValueError(f"quaternion norm {norm:.6g} outside [0.5, 2.0]")
    return q / norm


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * axis))


def quat_rotate(q, p):
    """Rotate a 3-vector by a normalized quaternion: R(q) @ p."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {p.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite input to quat_rotate")
    w, x, y, z = q
    # q * (0, p) * conj(q), expanded
    tx = 2.0 * (y * p[2] - z * p[1])
    ty = 2.0 * (z * p[0] - x * p[2])
    tz = 2.0 * (x * p[1] - y * p[0])
    return np.array(
        [
            p[0] + w * tx + (y * tz - z * ty),
            p[1] + w * ty + (z * tx - x * tz),
            p[2] + w * tz + (x * ty - y * tx),
        ]
    )


@dataclass(frozen=True, eq=False)
class Pose7:
    """Rigid pose: 3-vector position (mm) plus unit quaternion (w,x,y,z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64)
        if pos.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("position has non-finite components")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))
        self.position.setflags(write=False)
        self.orientation.setflags(write=False)

    @staticmethod
    def identity():
        return Pose7(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


def pose_apply(pose, p):
    """Apply the rigid transform: R(q) @ p + t."""
    return quat_rotate(pose.orientation, p) + pose.position


def pose_apply_many(pose, points):
    """Vectorized pose_apply over an (N, 3) array."""
    points = np.asarray(points, dtype=np.float64)
    return points @ quat_to_matrix(pose.orientation).T + pose.position


def pose_inverse(pose):
    qinv = quat_conjugate(pose.orientation)
    return Pose7(-quat_rotate(qinv, pose.position), qinv)


def pose_compose(a, b):
    """Pose product: (a ∘ b)(p) == a(b(p))."""
    return Pose7(pose_apply(a, b.position), quat_multiply(a.orientation, b.orientation))


@dataclass(frozen=True, eq=False)
class KinematicsSample:
    """One timestamp: per-instrument (base, wrist, tip) poses plus the camera."""

    timestamp: float
    instruments: tuple  # tuple of (base, wrist, tip) Pose7 triples
    camera: Pose7

    def __post_init__(self):
        for entry in self.instruments:
            if len(entry) != 3:
                raise ValueError(
                    f"each instrument needs exactly 3 part poses, got {len(entry)}"
                )


@dataclass(frozen=True, eq=False)
class KinematicsStream:
    samples: tuple
    rate_hz: float = 5.0
    _times: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.array([s.timestamp for s in self.samples], dtype=np.float64)
        if len(times) > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("stream timestamps must be strictly increasing")
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "_times", times)


def nearest_sample(stream, t):
    """Sample minimizing |timestamp - t|; exact ties go to the earlier one."""
    times = stream._times
    if times.size == 0:
        raise ValueError("cannot match against an empty kinematics stream")
    idx = int(np.searchsorted(times, t))
    if idx == 0:
        return stream.samples[0]
    if idx == times.size:
        return stream.samples[-1]
    before, after = times[idx - 1], times[idx]
    # earlier sample wins ties, so the later one must be strictly closer
    if (after - t) < (t - before):
        return stream.samples[idx]
    return stream.samples[idx - 1]


def load_kinematics_csv(path):
    """Load the line-per-record log:
    timestamp, instrument_id, part_id(0..2 or -1=camera), px, py, pz, qw, qx, qy, qz
    """
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = [s.strip() for s in line.split(",")]
            if len(fields) != 10:
                raise ValueError(f"{path}:{lineno}: expected 10 fields, got {len(fields)}")
            t = float(fields[0])
            inst = int(fields[1])
            part = int(fields[2])
            if part not in (-1, 0, 1, 2):
                raise ValueError(f"{path}:{lineno}: invalid part_id {part}")
            pose = Pose7(
                np.array([float(v) for v in fields[3:6]]),
                np.array([float(v) for v in fields[6:10]]),
            )
            records.append((t, inst, part, pose))

    samples = []
    by_time = {}
    order = []
    for t, inst, part, pose in records:
        if t not in by_time:
            by_time[t] = {"camera": None, "instruments": {}}
            order.append(t)
        if part == CAMERA_PART_ID:
            if by_time[t]["camera"] is not None:
                raise ValueError(f"{path}: duplicate camera pose at t={t}")
            by_time[t]["camera"] = pose
        else:
            by_time[t]["instruments"].setdefault(inst, {})[part] = pose
    for t in sorted(order):
        group = by_time[t]
        if group["camera"] is None:
            raise ValueError(f"{path}: sample at t={t} has no camera pose")
        instruments = []
        for inst in sorted(group["instruments"]):
            parts = group["instruments"][inst]
            missing = [PART_NAMES[k] for k in range(3) if k not in parts]
            if missing:
                raise ValueError(
                    f"{path}: instrument {inst} at t={t} missing parts: {', '.join(missing)}"
                )
            instruments.append((parts[0], parts[1], parts[2]))
        samples.append(KinematicsSample(t, tuple(instruments), group["camera"]))
    return KinematicsStream(tuple(samples))


def save_kinematics_csv(path, stream):
    with open(path, "w") as f:
        for s in stream.samples:
            rows = [(-1, 0, s.camera)]
            for inst, parts in enumerate(s.instruments):
                rows.extend((part_id, inst, pose) for part_id, pose in enumerate(parts))
            for part_id, inst, pose in rows:
                vals = [float(v) for v in (*pose.position, *pose.orientation)]
                fields = ",".join(repr(v) for v in vals)
                f.write(f"{float(s.timestamp)!r},{inst},{part_id},{fields}\n")
