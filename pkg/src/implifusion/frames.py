"""Per-frame preprocessing: depth filtering, back-projection, normals,
kernel support radii, and the confidence maps.

A frame arrives as a metric depth map (NaN marks invalid pixels) plus an
optional color image. Preprocessing is purely per pixel; the later
self-evaluation step (prediction module) refines vertices and normals
against the frame's own field and fills in curvature and confidence.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import Intrinsics, back_project


@dataclass
class InputFrame:
    timestamp: float
    intrinsics: Intrinsics
    depth: np.ndarray              # (h, w) meters, NaN invalid, bilateral-filtered
    color: np.ndarray | None       # (h, w, 3) uint8 or None
    intensity: np.ndarray | None   # (h, w) luminance in [0, 1]
    vertices: np.ndarray           # (h, w, 3) refined after self-evaluation
    normals: np.ndarray            # (h, w, 3) unit, oriented toward the camera
    depth_normals: np.ndarray      # (h, w, 3) raw central-difference normals
    supports: np.ndarray           # (h, w) kernel support radii, NaN invalid
    curvature: np.ndarray | None = None        # (h, w, 2) principal curvatures
    curvature_reliable: np.ndarray | None = None
    confidence: np.ndarray | None = None       # (h, w) in (0, 1], NaN invalid
    refined: np.ndarray | None = None          # (h, w) bool, self-evaluation hit
    field_gradient: np.ndarray | None = None   # (h, w, 3) frame-field gradient at v

    def valid_mask(self):
        return np.isfinite(self.vertices[..., 2]) & np.isfinite(self.normals[..., 2])


@njit(cache=True)
def _bilateral_core(depth, valid, radius, sigma_s, sigma_r):
    h, w = depth.shape
    out = np.full((h, w), np.nan)
    inv2ss = 1.0 / (2.0 * sigma_s * sigma_s)
    inv2sr = 1.0 / (2.0 * sigma_r * sigma_r)
    for y in range(h):
        for x in range(w):
            if not valid[y, x]:
                continue
            center = depth[y, x]
            acc = 0.0
            wsum = 0.0
            y0 = max(0, y - radius)
            y1 = min(h, y + radius + 1)
            x0 = max(0, x - radius)
            x1 = min(w, x + radius + 1)
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    if not valid[yy, xx]:
                        continue
                    dz = depth[yy, xx] - center
                    ds2 = (yy - y) * (yy - y) + (xx - x) * (xx - x)
                    wgt = np.exp(-ds2 * inv2ss - dz * dz * inv2sr)
                    acc += wgt * depth[yy, xx]
                    wsum += wgt
            out[y, x] = acc / wsum
    return out


def bilateral_filter(depth, sigma_s=4.5, sigma_r=0.03, radius=3):
    """Joint spatial/range smoothing; invalid pixels stay invalid and carry no weight."""
    depth = np.ascontiguousarray(depth, dtype=np.float64)
    valid = np.isfinite(depth)
    return _bilateral_core(depth, valid, radius, float(sigma_s), float(sigma_r))


def normals_from_vertices(vertices):
    """Central-difference surface normals, unit length, oriented so n . v < 0.

    Border pixels and pixels with an invalid stencil neighbor are invalid.
    """
    v = np.asarray(vertices, dtype=np.float64)
    h, w = v.shape[:2]
    out = np.full((h, w, 3), np.nan)
    tx = v[1:-1, 2:] - v[1:-1, :-2]
    ty = v[2:, 1:-1] - v[:-2, 1:-1]
    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1)
    with np.errstate(invalid="ignore"):
        good = norm > 1e-12
    n = np.where(good[..., None], n / np.where(good, norm, 1.0)[..., None], np.nan)
    # flip toward the camera: the vertex doubles as the view direction
    dots = np.sum(n * v[1:-1, 1:-1], axis=-1)
    n = np.where((dots > 0)[..., None], -n, n)
    out[1:-1, 1:-1] = n
    return out


@njit(cache=True)
def _support_core(verts, valid, k, radius, r_min, r_max):
    h, w = valid.shape
    out = np.full((h, w), np.nan)
    best = np.empty(k)
    for y in range(h):
        for x in range(w):
            if not valid[y, x]:
                continue
            vx = verts[y, x, 0]
            vy = verts[y, x, 1]
            vz = verts[y, x, 2]
            for i in range(k):
                best[i] = np.inf
            cnt = 0
            y0 = max(0, y - radius)
            y1 = min(h, y + radius + 1)
            x0 = max(0, x - radius)
            x1 = min(w, x + radius + 1)
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    if (yy == y and xx == x) or not valid[yy, xx]:
                        continue
                    dx = verts[yy, xx, 0] - vx
                    dy = verts[yy, xx, 1] - vy
                    dz = verts[yy, xx, 2] - vz
                    d = np.sqrt(dx * dx + dy * dy + dz * dz)
                    cnt += 1
                    if d < best[k - 1]:
                        pos = k - 1
                        while pos > 0 and best[pos - 1] > d:
                            best[pos] = best[pos - 1]
                            pos -= 1
                        best[pos] = d
            if cnt >= k:
                s = best[k - 1]
                if s < r_min:
                    s = r_min
                elif s > r_max:
                    s = r_max
                out[y, x] = s
    return out


def support_radii(vertices, k=8, window=7, r_min=0.002, r_max=0.5):
    """Distance to the k-th nearest valid vertex inside the window, clamped.

    Pixels with fewer than k valid neighbors in the window are invalid.
    """
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be an odd size >= 3")
    v = np.ascontiguousarray(vertices, dtype=np.float64)
    valid = np.isfinite(v[..., 2])
    return _support_core(v, valid, int(k), window // 2, float(r_min), float(r_max))


def radial_weight(px, py, intr, sigma=0.6):
    """Distance-to-center confidence c_d at continuous pixel coordinates."""
    ccx = (intr.width - 1) / 2.0
    ccy = (intr.height - 1) / 2.0
    diag = np.hypot(intr.width - 1.0, intr.height - 1.0)
    gamma = np.hypot(np.asarray(px, dtype=np.float64) - ccx,
                     np.asarray(py, dtype=np.float64) - ccy) / diag
    return np.exp(-(gamma * gamma) / (2.0 * sigma * sigma))


def radial_weight_map(intr, sigma=0.6):
    xs = np.arange(intr.width, dtype=np.float64)
    ys = np.arange(intr.height, dtype=np.float64)
    u, v = np.meshgrid(xs, ys)
    return radial_weight(u, v, intr, sigma)


def confidence_map(frame, gradients, epsilon=1000.0, sigma=0.6):
    """Per-pixel confidence c = c_r * c_d.

    c_r = exp(-epsilon / |grad . n_D|) with n_D the raw depth normal and grad
    the frame-field gradient at the (refined) vertex; c_d falls off radially
    from the image center. The result is floored at the smallest positive
    normal float so valid pixels always satisfy 0 < c <= 1.
    """
    g = np.asarray(gradients, dtype=np.float64)
    nd = frame.depth_normals
    dot = np.abs(np.sum(g * nd, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c_r = np.exp(-epsilon / dot)
    c_r = np.where(dot > 0, c_r, 0.0)
    tiny = np.finfo(np.float64).tiny
    c = np.maximum(c_r, tiny) * radial_weight_map(frame.intrinsics, sigma)
    c = np.maximum(c, tiny)
    invalid = ~(np.isfinite(dot))
    c[invalid] = np.nan
    return c


def luminance(color):
    """Scalar intensity in [0, 1] from an (h, w, 3) uint8 or float RGB image."""
    c = np.asarray(color)
    if c.dtype == np.uint8:
        c = c.astype(np.float64) / 255.0
    else:
        c = c.astype(np.float64)
        if c.max(initial=0.0) > 1.5:
            c = c / 255.0
    return 0.299 * c[..., 0] + 0.587 * c[..., 1] + 0.114 * c[..., 2]


def preprocess_frame(depth, color, intr, timestamp=0.0,
                     depth_min=0.3, depth_max=8.0,
                     sigma_s=4.5, sigma_r=0.03,
                     support_k=8, support_window=7,
                     support_min=0.002, support_max=0.5):
    """Stage-one preprocessing: validity clamp, bilateral filter, back-projection,
    normals and support radii. Curvature/confidence are filled by the
    self-evaluation step in the prediction module.
    """
    depth = np.asarray(depth, dtype=np.float64).copy()
    with np.errstate(invalid="ignore"):
        depth[(depth < depth_min) | (depth > depth_max)] = np.nan
    filtered = bilateral_filter(depth, sigma_s=sigma_s, sigma_r=sigma_r)
    vertices = back_project(filtered, intr)
    normals = normals_from_vertices(vertices)
    supports = support_radii(vertices, k=support_k, window=support_window,
                             r_min=support_min, r_max=support_max)
    intensity = luminance(color) if color is not None else None
    return InputFrame(
        timestamp=float(timestamp),
        intrinsics=intr,
        depth=filtered,
        color=color,
        intensity=intensity,
        vertices=vertices,
        normals=normals.copy(),
        depth_normals=normals,
        supports=supports,
    )
