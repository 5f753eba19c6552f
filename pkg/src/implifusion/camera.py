"""Pinhole camera model and rigid-body transform helpers.

Conventions used throughout the package: camera looks down +z, pixel (x, y)
maps to column x and row y, poses are camera-to-world 4x4 matrices, and
invalid entries of float maps are NaN.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0  # depth units per meter

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)

    def scaled(self, factor):
        """Intrinsics of the same view resampled by `factor` (pixel-center convention)."""
        return Intrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=(self.cx + 0.5) * factor - 0.5,
            cy=(self.cy + 0.5) * factor - 0.5,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            depth_scale=self.depth_scale,
        )


def back_project(depth, intr):
    """Lift a depth map (meters, NaN invalid) to a vertex map in camera coordinates.

    Returns an (h, w, 3) float64 array; rows of invalid depth are NaN.
    """
    h, w = depth.shape
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    u, v = np.meshgrid(xs, ys)
    z = np.asarray(depth, dtype=np.float64)
    out = np.empty((h, w, 3), dtype=np.float64)
    out[..., 0] = (u - intr.cx) / intr.fx * z
    out[..., 1] = (v - intr.cy) / intr.fy * z
    out[..., 2] = z
    return out


def project(points, intr):
    """Project camera-space points (..., 3) to pixel coordinates (..., 2).

    Points at or behind the camera plane (z <= 0) project to NaN.
    """
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = pts[..., 0] / z * intr.fx + intr.cx
        py = pts[..., 1] / z * intr.fy + intr.cy
    bad = ~(z > 0)
    px = np.where(bad, np.nan, px)
    py = np.where(bad, np.nan, py)
    return np.stack([px, py], axis=-1)


def skew(v):
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=np.float64
    )


def so3_exp(omega):
    """Rodrigues formula; second-order series below 1e-8 rad."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def se3_exp(xi):
    """Exponential of a twist (vx, vy, vz, wx, wy, wz) as a 4x4 transform."""
    xi = np.asarray(xi, dtype=np.float64)
    v, omega = xi[:3], xi[3:]
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < 1e-8:
        vmat = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        a = (1.0 - np.cos(theta)) / (theta * theta)
        b = (theta - np.sin(theta)) / (theta ** 3)
        vmat = np.eye(3) + a * k + b * (k @ k)
    out = np.eye(4)
    out[:3, :3] = so3_exp(omega)
    out[:3, 3] = vmat @ v
    return out


def so3_log(rot):
    """Rotation vector of a rotation matrix."""
    tr = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-8:
        return np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi the off-diagonal form degenerates; use the symmetric part
        aa = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(aa), 0.0))
        signs = np.array(
            [1.0, np.sign(aa[0, 1]) or 1.0, np.sign(aa[0, 2]) or 1.0]
        )
        axis = axis * signs
        n = np.linalg.norm(axis)
        if n == 0.0:
            return np.zeros(3)
        return axis / n * theta
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return w * theta / (2.0 * np.sin(theta))


def invert_se3(t):
    out = np.eye(4)
    r = t[:3, :3]
    out[:3, :3] = r.T
    out[:3, 3] = -r.T @ t[:3, 3]
    return out


def transform_points(t, points):
    pts = np.asarray(points, dtype=np.float64)
    return pts @ t[:3, :3].T + t[:3, 3]


def rotate_vectors(t, vectors):
    return np.asarray(vectors, dtype=np.float64) @ t[:3, :3].T


def rotation_angle_deg(rot):
    tr = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(tr)))


def quat_from_rotation(rot):
    """Unit quaternion (qx, qy, qz, qw) from a rotation matrix."""
    m = rot
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (m[2, 1] - m[1, 2]) / s
        qy = (m[0, 2] - m[2, 0]) / s
        qz = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        qw = (m[2, 1] - m[1, 2]) / s
        qx = 0.25 * s
        qy = (m[0, 1] + m[1, 0]) / s
        qz = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        qw = (m[0, 2] - m[2, 0]) / s
        qx = (m[0, 1] + m[1, 0]) / s
        qy = 0.25 * s
        qz = (m[1, 2] + m[2, 1]) / s
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        qw = (m[1, 0] - m[0, 1]) / s
        qx = (m[0, 2] + m[2, 0]) / s
        qy = (m[1, 2] + m[2, 1]) / s
        qz = 0.25 * s
    q = np.array([qx, qy, qz, qw])
    if qw < 0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_from_quat(q):
    """Rotation matrix from a unit quaternion (qx, qy, qz, qw)."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def pose_from_tq(t, q):
    out = np.eye(4)
    out[:3, :3] = rotation_from_quat(q)
    out[:3, 3] = np.asarray(t, dtype=np.float64)
    return out
