"""File formats: PGM/PPM images, false-color PNG, intrinsics config,
kinematics CSV logs, and flat binary weight checkpoints."""

import struct
import zlib
from pathlib import Path

import numpy as np

# false-color palette for label overlays: background, base, wrist, tip
LABEL_COLORS = np.array(
    [[0, 0, 0], [70, 130, 220], [240, 200, 60], [220, 60, 60]], dtype=np.uint8
)


def write_pgm(path, grid):
    """Write a 2D uint8 array as binary PGM (P5)."""
    grid = np.ascontiguousarray(grid, dtype=np.uint8)
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(grid.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, rest = _read_token(data, 0)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, rest = _read_token(data, rest)
    h, rest = _read_token(data, rest)
    maxval, rest = _read_token(data, rest)
    if int(maxval) != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    w, h = int(w), int(h)
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=rest)
    return pixels.reshape(h, w).copy()


def write_ppm(path, rgb):
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    magic, rest = _read_token(data, 0)
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, rest = _read_token(data, rest)
    h, rest = _read_token(data, rest)
    maxval, rest = _read_token(data, rest)
    if int(maxval) != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    w, h = int(w), int(h)
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=rest)
    return pixels.reshape(h, w, 3).copy()


def _read_token(data, pos):
    # skip whitespace and '#' comment lines between header tokens
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ValueError("truncated netpbm header")
    return data[start:pos], pos + 1


def write_png(path, rgb):
    """Minimal PNG writer (8-bit RGB, zlib default compression)."""
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[row].tobytes() for row in range(h))

    def chunk(tag, payload):
        out = struct.pack(">I", len(payload)) + tag + payload
        return out + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", header))
        f.write(chunk(b"IDAT", zlib.compress(raw)))
        f.write(chunk(b"IEND", b""))


def label_overlay(labels):
    """Map a label grid to its false-color RGB image."""
    return LABEL_COLORS[np.asarray(labels, dtype=np.uint8)]


def read_intrinsics(path):
    """Key-value intrinsics file: fx, fy, cx, cy, width, height, near_clip."""
    values = read_config(path)
    required = ["fx", "fy", "cx", "cy", "width", "height"]
    missing = [k for k in required if k not in values]
    if missing:
        raise ValueError(f"{path}: missing intrinsics keys: {', '.join(missing)}")
    return values


def read_config(path):
    """Parse a key=value (or key: value) text file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, val = line.partition(sep)
                values[key.strip()] = val.strip()
                break
        else:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
    return values


def write_config(path, values):
    with open(path, "w") as f:
        for key, val in values.items():
            f.write(f"{key} = {val}\n")


def save_checkpoint(path, tensors):
    """Flat binary checkpoint: text header of names and shapes, then the
    float64 little-endian payloads concatenated in header order."""
    names = list(tensors)
    with open(path, "wb") as f:
        f.write(f"TIPSEG-CKPT 1 {len(names)}\n".encode("ascii"))
        for name in names:
            shape = ",".join(str(d) for d in np.shape(tensors[name]))
            f.write(f"{name} {shape if shape else 'scalar'}\n".encode("ascii"))
        for name in names:
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.readline().decode("ascii").split()
        if len(magic) != 3 or magic[0] != "TIPSEG-CKPT":
            raise ValueError(f"{path}: not a tipseg checkpoint")
        count = int(magic[2])
        entries = []
        for _ in range(count):
            name, _, shape = f.readline().decode("ascii").strip().partition(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            entries.append((name, dims))
        out = {}
        for name, dims in entries:
            n = int(np.prod(dims)) if dims else 1
            buf = f.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated payload for {name}")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(dims).copy()
    return out
