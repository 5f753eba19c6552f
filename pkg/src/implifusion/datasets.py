"""Dataset IO: TUM-layout RGB-D sequences, trajectory text files, and
binary PLY point clouds.

TUM layout: 16-bit depth PNGs (depth_scale units per meter), 8-bit RGB PNGs,
`depth.txt`/`rgb.txt` listings, and optionally an association file pairing
depth and color by timestamp. Without one, frames are paired by nearest
timestamp within 20 ms.
"""

import os
from dataclasses import dataclass, field

import cv2
import numpy as np

from .camera import Intrinsics, pose_from_tq, quat_from_rotation


class DatasetError(Exception):
    pass


class MissingFileError(DatasetError):
    pass


class AssociationFormatError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


TUM_DEFAULT_INTRINSICS = Intrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5,
                                    width=640, height=480, depth_scale=5000.0)


@dataclass
class SequenceSpec:
    root: str
    format: str = "tum"                      # tum | icl-nuim (same layout)
    intrinsics: Intrinsics = field(default_factory=lambda: TUM_DEFAULT_INTRINSICS)
    association_file: str = None
    groundtruth_file: str = None


def _read_listing(path):
    """Lines of 'timestamp value...' skipping comments; (line_no, tokens)."""
    if not os.path.isfile(path):
        raise MissingFileError(f"listing not found: {path}")
    out = []
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append((i, line.split()))
    return out


def _parse_association(path):
    """(t_depth, depth_path, t_rgb, rgb_path) per line; column order sniffed
    from the file paths."""
    rows = []
    for ln, tok in _read_listing(path):
        if len(tok) != 4:
            raise AssociationFormatError(
                f"{path}:{ln}: expected 4 fields, got {len(tok)}")
        try:
            t0, p0, t1, p1 = float(tok[0]), tok[1], float(tok[2]), tok[3]
        except ValueError:
            raise AssociationFormatError(
                f"{path}:{ln}: timestamps must be numeric")
        if "depth" in p0 and "depth" not in p1:
            rows.append((t0, p0, t1, p1))
        elif "depth" in p1 and "depth" not in p0:
            rows.append((t1, p1, t0, p0))
        else:
            rows.append((t0, p0, t1, p1))   # assume depth first
    return rows


def _pair_by_timestamp(depth_rows, rgb_rows, max_dt=0.02):
    rgb_ts = np.array([float(t[0]) for _, t in rgb_rows])
    order = np.argsort(rgb_ts)
    rgb_ts_sorted = rgb_ts[order]
    pairs = []
    for ln, tok in depth_rows:
        td = float(tok[0])
        i = np.searchsorted(rgb_ts_sorted, td)
        best, bestdt = -1, np.inf
        for j in (i - 1, i):
            if 0 <= j < len(rgb_ts_sorted):
                dt = abs(rgb_ts_sorted[j] - td)
                if dt < bestdt:
                    best, bestdt = order[j], dt
        if best >= 0 and bestdt <= max_dt:
            pairs.append((td, tok[1], float(rgb_rows[best][1][0]),
                          rgb_rows[best][1][1]))
    return pairs


def _load_depth(path, depth_scale):
    if not os.path.isfile(path):
        raise MissingFileError(f"depth image not found: {path}")
    img = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"unreadable depth image: {path}")
    return img.astype(np.float64) / depth_scale


def _load_color(path):
    if not os.path.isfile(path):
        raise MissingFileError(f"color image not found: {path}")
    img = cv2.imread(path, cv2.IMREAD_COLOR)
    if img is None:
        raise DatasetError(f"unreadable color image: {path}")
    return img[..., ::-1].copy()   # BGR to RGB


def read_sequence(spec, max_frames=None):
    """Yield (timestamp, depth_m, color_rgb) frames in timestamp order."""
    root = spec.root
    assoc = spec.association_file
    if assoc is None:
        for cand in ("associations.txt", "association.txt"):
            p = os.path.join(root, cand)
            if os.path.isfile(p):
                assoc = p
                break
    if assoc is not None:
        pairs = _parse_association(assoc)
    else:
        pairs = _pair_by_timestamp(
            _read_listing(os.path.join(root, "depth.txt")),
            _read_listing(os.path.join(root, "rgb.txt")))
    pairs.sort(key=lambda r: r[0])
    if max_frames is not None:
        pairs = pairs[:max_frames]
    intr = spec.intrinsics
    for td, dpath, trgb, cpath in pairs:
        depth = _load_depth(os.path.join(root, dpath), intr.depth_scale)
        color = _load_color(os.path.join(root, cpath))
        if depth.shape[:2] != (intr.height, intr.width):
            raise DimensionMismatchError(
                f"{dpath}: depth is {depth.shape[:2]}, intrinsics expect "
                f"{(intr.height, intr.width)}")
        if color.shape[:2] != depth.shape[:2]:
            raise DimensionMismatchError(
                f"{cpath}: color is {color.shape[:2]}, depth is {depth.shape[:2]}")
        yield td, depth, color


def write_tum_sequence(root, frames, depth_scale=5000.0, poses=None):
    """Write (timestamp, depth_m, color) frames as a TUM-layout directory.
    Used by round-trip tests and to materialize synthetic sequences."""
    os.makedirs(os.path.join(root, "depth"), exist_ok=True)
    os.makedirs(os.path.join(root, "rgb"), exist_ok=True)
    dlist, clist, alist = [], [], []
    for ts, depth, color in frames:
        name = f"{ts:.6f}.png"
        dpath = os.path.join("depth", name)
        cpath = os.path.join("rgb", name)
        raw = np.clip(np.round(depth * depth_scale), 0, 65535).astype(np.uint16)
        cv2.imwrite(os.path.join(root, dpath), raw)
        cv2.imwrite(os.path.join(root, cpath), color[..., ::-1])
        dlist.append(f"{ts:.6f} {dpath}")
        clist.append(f"{ts:.6f} {cpath}")
        alist.append(f"{ts:.6f} {dpath} {ts:.6f} {cpath}")
    for name, rows in (("depth.txt", dlist), ("rgb.txt", clist),
                       ("associations.txt", alist)):
        with open(os.path.join(root, name), "w") as f:
            f.write("\n".join(rows) + "\n")
    if poses is not None:
        write_trajectory(os.path.join(root, "groundtruth.txt"), poses)


def format_trajectory(trajectory):
    """(timestamp, pose) pairs as 'timestamp tx ty tz qx qy qz qw' text."""
    lines = []
    for ts, pose in trajectory:
        t = pose[:3, 3]
        q = quat_from_rotation(pose[:3, :3])
        lines.append("%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f"
                     % (ts, t[0], t[1], t[2], q[0], q[1], q[2], q[3]))
    return "\n".join(lines) + "\n"


def write_trajectory(path, trajectory):
    try:
        with open(path, "w") as f:
            f.write(format_trajectory(trajectory))
    except OSError as e:
        raise DatasetError(f"cannot write trajectory {path}: {e}")


def read_trajectory(path):
    """Read a trajectory file; returns [(timestamp, 4x4 pose)]."""
    out = []
    for ln, tok in _read_listing(path):
        if len(tok) < 8:
            raise AssociationFormatError(
                f"{path}:{ln}: expected 8 fields, got {len(tok)}")
        vals = [float(x) for x in tok[:8]]
        out.append((vals[0], pose_from_tq(vals[1:4], vals[4:8])))
    return out


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex %d
property float x
property float y
property float z
property float nx
property float ny
property float nz
property uchar red
property uchar green
property uchar blue
property float confidence
end_header
"""

_PLY_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("confidence", "<f4")])


def pointcloud_bytes(model):
    """Binary little-endian PLY of the surfel model, as bytes."""
    n = len(model)
    rec = np.empty(n, dtype=_PLY_DTYPE)
    for i, k in enumerate(("x", "y", "z")):
        rec[k] = model.positions[:, i].astype(np.float32)
    for i, k in enumerate(("nx", "ny", "nz")):
        rec[k] = model.normals[:, i].astype(np.float32)
    cols = np.clip(np.round(model.colors * 255.0), 0, 255).astype(np.uint8)
    rec["red"] = cols[:, 0]
    rec["green"] = cols[:, 1]
    rec["blue"] = cols[:, 2]
    rec["confidence"] = model.confidence.astype(np.float32)
    return (_PLY_HEADER % n).encode("ascii") + rec.tobytes()


def write_pointcloud(path, model):
    try:
        with open(path, "wb") as f:
            f.write(pointcloud_bytes(model))
    except OSError as e:
        raise DatasetError(f"cannot write point cloud {path}: {e}")


def read_pointcloud(path):
    """Read back a PLY written by write_pointcloud; returns a dict of arrays."""
    if not os.path.isfile(path):
        raise MissingFileError(f"point cloud not found: {path}")
    with open(path, "rb") as f:
        header = b""
        while not header.endswith(b"end_header\n"):
            chunk = f.readline()
            if not chunk:
                raise DatasetError(f"truncated PLY header: {path}")
            header += chunk
        n = 0
        for line in header.decode("ascii").splitlines():
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
        rec = np.fromfile(f, dtype=_PLY_DTYPE, count=n)
    if len(rec) != n:
        raise DatasetError(
            f"truncated PLY body: {path} declares {n} vertices, "
            f"holds {len(rec)}")
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    nrm = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    col = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1) / 255.0
    return {"positions": pos, "normals": nrm, "colors": col,
            "confidence": rec["confidence"].astype(np.float64)}
