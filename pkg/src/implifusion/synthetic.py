"""Analytic test scenes: exact ray-traced depth, smooth procedural albedo,
seeded depth noise, and ground-truth distance oracles.

Scenes are expressed in the first camera's frame (the first pose is the
identity), so rendered sequences start aligned with the estimated
trajectory. Depth is the camera-frame z of the nearest primitive hit; noise
is added in integer depth units at the intrinsics' depth scale.
"""

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, se3_exp


def _texture(points, base):
    """Smooth checker-modulated albedo; view independent, differentiable."""
    x = points[..., 0]
    y = points[..., 1]
    z = points[..., 2]
    ch = (np.sin(2 * np.pi * x / 0.35) * np.sin(2 * np.pi * y / 0.35)
          * np.sin(2 * np.pi * z / 0.35))
    m = (0.72 + 0.18 * np.tanh(2.5 * ch)
         + 0.10 * np.sin(2 * np.pi * (x + y + z) / 0.47))
    return np.clip(m[..., None] * np.asarray(base), 0.0, 1.0)


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray
    color: tuple = (0.85, 0.82, 0.75)

    def intersect(self, origin, dirs):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        denom = dirs @ n
        num = (np.asarray(self.point) - origin) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t = np.where(np.abs(denom) > 1e-12, t, np.inf)
        return np.where(t > 1e-6, t, np.inf)

    def distance(self, points):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return np.abs((points - np.asarray(self.point)) @ n)

    def albedo(self, points):
        return _texture(points, self.color)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    color: tuple = (0.75, 0.35, 0.30)

    def intersect(self, origin, dirs):
        oc = origin - np.asarray(self.center, dtype=np.float64)
        a = np.einsum("...i,...i->...", dirs, dirs)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t1 = (-b - sq) / (2.0 * a)
        t2 = (-b + sq) / (2.0 * a)
        t = np.where(t1 > 1e-6, t1, t2)
        return np.where((disc >= 0.0) & (t > 1e-6), t, np.inf)

    def distance(self, points):
        return np.abs(np.linalg.norm(points - np.asarray(self.center), axis=-1)
                      - self.radius)

    def albedo(self, points):
        return _texture(points, self.color)


@dataclass
class Box:
    """Axis-aligned box; hollow boxes are rooms seen from inside."""

    center: np.ndarray
    half: np.ndarray
    color: tuple = (0.55, 0.65, 0.80)
    hollow: bool = False

    def intersect(self, origin, dirs):
        lo = np.asarray(self.center, dtype=np.float64) - np.asarray(self.half)
        hi = np.asarray(self.center, dtype=np.float64) + np.asarray(self.half)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - origin) / dirs
            t2 = (hi - origin) / dirs
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        if self.hollow:
            t = tmax
            ok = (tmax > 1e-6) & (tmax >= tmin)
        else:
            t = tmin
            ok = (tmin > 1e-6) & (tmin <= tmax)
        return np.where(ok, t, np.inf)

    def distance(self, points):
        q = np.abs(points - np.asarray(self.center, dtype=np.float64)) \
            - np.asarray(self.half, dtype=np.float64)
        if self.hollow:
            # interior distance to the nearest wall; |.| covers stray points
            return np.abs(np.max(q, axis=-1))
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return np.abs(outside + inside)

    def albedo(self, points):
        return _texture(points, self.color)


@dataclass
class SyntheticScene:
    name: str
    primitives: list
    poses: list = field(default_factory=list)   # (timestamp, 4x4 cam-to-world)

    def distance(self, points):
        """Unsigned distance from each point to the nearest scene surface."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d = np.full(len(points), np.inf)
        for p in self.primitives:
            d = np.minimum(d, p.distance(points))
        return d


def render_synthetic(scene, pose, intr, sigma=0.0, rng=None):
    """Exact nearest-hit depth and albedo color for one camera pose.

    `sigma` is the Gaussian noise level in integer depth units at the
    intrinsics' depth scale (applied to depth only, then rescaled to
    meters). Returns (depth float64 meters, color uint8).
    """
    h, w = intr.height, intr.width
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dirs_cam = np.stack([(us - intr.cx) / intr.fx,
                         (vs - intr.cy) / intr.fy,
                         np.ones_like(us)], axis=-1)
    R = np.asarray(pose, dtype=np.float64)[:3, :3]
    origin = np.asarray(pose, dtype=np.float64)[:3, 3]
    dirs = dirs_cam @ R.T
    t_best = np.full((h, w), np.inf)
    which = np.full((h, w), -1, dtype=np.int64)
    for i, prim in enumerate(scene.primitives):
        t = prim.intersect(origin, dirs)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        which[closer] = i
    hit = np.isfinite(t_best)
    depth = np.where(hit, t_best, 0.0)   # dirs_cam z-component is 1
    color = np.zeros((h, w, 3))
    pts = origin + t_best[..., None] * dirs
    for i, prim in enumerate(scene.primitives):
        sel = which == i
        if np.any(sel):
            color[sel] = prim.albedo(pts[sel])
    if sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        noise = rng.normal(0.0, sigma, size=depth.shape) / intr.depth_scale
        depth = np.where(hit, np.maximum(depth + noise, 0.0), 0.0)
    return depth, (np.clip(color, 0.0, 1.0) * 255.0).astype(np.uint8)


def _pivot_orbit(pivot, n_frames, pan_deg, tilt_deg, bob, fps=30.0):
    """Poses swinging around a pivot point in front of the first camera; the
    first pose is exactly the identity."""
    pivot = np.asarray(pivot, dtype=np.float64)
    poses = []
    for k in range(n_frames):
        s = np.sin(2.0 * np.pi * k / max(n_frames, 1))
        c = np.cos(2.0 * np.pi * k / max(n_frames, 1)) - 1.0
        pan = np.deg2rad(pan_deg) * s
        tilt = np.deg2rad(tilt_deg) * c
        P = np.eye(4)
        P[:3, 3] = pivot
        Pinv = np.eye(4)
        Pinv[:3, 3] = -pivot
        rot = se3_exp(np.array([0.0, 0.0, 0.0, tilt, pan, 0.0]))
        shift = se3_exp(np.array([bob[0] * s, bob[1] * s, bob[2] * s,
                                  0.0, 0.0, 0.0]))
        poses.append((k / fps, P @ rot @ Pinv @ shift))
    return poses


def synthetic_intrinsics(width=320, height=240):
    """Pinhole intrinsics for synthetic renders: ~64 degree horizontal FOV at
    any resolution, TUM-style 5000 depth units per meter."""
    return Intrinsics(fx=0.8 * width, fy=0.8 * width,
                      cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                      width=width, height=height, depth_scale=5000.0)


def make_scene(name, n_frames=None):
    """Named scene registry: 'room', 'plane', 'sphere'."""
    if name == "room":
        n = 40 if n_frames is None else n_frames
        prims = [
            Box(center=np.array([0.0, 0.0, 1.6]),
                half=np.array([1.6, 1.2, 2.0]), hollow=True,
                color=(0.80, 0.78, 0.72)),
            Sphere(center=np.array([0.55, 0.45, 1.7]), radius=0.35,
                   color=(0.75, 0.35, 0.30)),
            Box(center=np.array([-0.62, 0.55, 1.9]),
                half=np.array([0.30, 0.25, 0.30]),
                color=(0.35, 0.55, 0.80)),
        ]
        poses = _pivot_orbit([0.0, 0.0, 1.6], n, pan_deg=4.0, tilt_deg=2.0,
                             bob=(0.03, 0.015, 0.02))
        return SyntheticScene(name="room", primitives=prims, poses=poses)
    if name == "plane":
        n = 30 if n_frames is None else n_frames
        prims = [Plane(point=np.array([0.0, 0.0, 2.0]),
                       normal=np.array([0.0, 0.0, -1.0]))]
        poses = _pivot_orbit([0.0, 0.0, 2.0], n, pan_deg=3.0, tilt_deg=1.5,
                             bob=(0.03, 0.015, 0.02))
        return SyntheticScene(name="plane", primitives=prims, poses=poses)
    if name == "sphere":
        n = 30 if n_frames is None else n_frames
        prims = [
            Sphere(center=np.array([0.0, 0.0, 1.5]), radius=0.5,
                   color=(0.75, 0.40, 0.30)),
            Plane(point=np.array([0.0, 0.0, 3.0]),
                  normal=np.array([0.0, 0.0, -1.0]),
                  color=(0.70, 0.72, 0.78)),
        ]
        poses = _pivot_orbit([0.0, 0.0, 1.5], n, pan_deg=5.0, tilt_deg=2.5,
                             bob=(0.03, 0.02, 0.02))
        return SyntheticScene(name="sphere", primitives=prims, poses=poses)
    raise ValueError(f"unknown synthetic scene '{name}'")
