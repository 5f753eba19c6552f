"""Ray-intersection surface evaluation against an HRBF field.

Prediction casts one ray per pixel. Kernels whose support spheres intersect
the ray are clustered by the ray parameter of their projected centers; the
cluster nearest the camera defines the field locally, and the first
positive-to-negative crossing of that field is located by bisection. The
same machinery refines an input frame against its own field, and a surfel
splatting pass provides the comparison baseline.

Batched prediction works in the camera frame: kernels are binned into the
pixels their support can project into (a conservative superset), so each
pixel only examines its own bin.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import invert_se3, transform_points, rotate_vectors
from .field import KernelSet, _eval_core, _principal_curvatures
from .frames import confidence_map, luminance


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")


@dataclass
class PredictedMaps:
    vertices: np.ndarray      # (h, w, 3) world coordinates, NaN invalid
    normals: np.ndarray       # (h, w, 3) unit, facing the camera
    curvature: np.ndarray     # (h, w, 2) principal curvatures at the hit
    confidence: np.ndarray    # (h, w) from the nearest kernel
    colors: np.ndarray        # (h, w, 3) float in [0, 1]
    intensity: np.ndarray     # (h, w) luminance
    supports: np.ndarray      # (h, w) nearest-kernel support radius
    nearest: np.ndarray       # (h, w) int64 kernel index, -1 invalid
    valid: np.ndarray         # (h, w) bool
    pose: np.ndarray          # camera-to-world transform the maps were cast from


@dataclass(frozen=True)
class PredictionParams:
    eta: float = 1.0e6
    gap_min: float = 0.1
    gap_factor: float = 2.0
    n_probe: int = 8
    bisect_tol: float = 1e-5
    bisect_max_iter: int = 32
    grad_floor: float = 1e-8
    kappa_clamp: float = 300.0
    t_min: float = 0.05


@njit(cache=True)
def _pixel_bins(centers, supports, fx, fy, cx, cy, w, h, t_min):
    """Conservative per-pixel candidate lists: kernel j lands in every pixel
    its support sphere can possibly project into. Returns CSR offsets and ids.
    """
    n = centers.shape[0]
    npx = h * w
    offsets = np.zeros(npx + 1, dtype=np.int64)
    boxes = np.empty((n, 4), dtype=np.int64)
    ok = np.zeros(n, dtype=np.uint8)
    for j in range(n):
        x = centers[j, 0]
        y = centers[j, 1]
        z = centers[j, 2]
        r = supports[j]
        if z + r <= t_min:
            continue
        zm = z - r
        if zm <= 1e-3:
            x0, x1, y0, y1 = 0, w - 1, 0, h - 1
        else:
            zp = z + r
            lox = (x - r) / zm
            if (x - r) / zp < lox:
                lox = (x - r) / zp
            hix = (x + r) / zm
            if (x + r) / zp > hix:
                hix = (x + r) / zp
            loy = (y - r) / zm
            if (y - r) / zp < loy:
                loy = (y - r) / zp
            hiy = (y + r) / zm
            if (y + r) / zp > hiy:
                hiy = (y + r) / zp
            x0 = int(np.floor(cx + fx * lox)) - 1
            x1 = int(np.ceil(cx + fx * hix)) + 1
            y0 = int(np.floor(cy + fy * loy)) - 1
            y1 = int(np.ceil(cy + fy * hiy)) + 1
        if x1 < 0 or x0 > w - 1 or y1 < 0 or y0 > h - 1:
            continue
        if x0 < 0:
            x0 = 0
        if y0 < 0:
            y0 = 0
        if x1 > w - 1:
            x1 = w - 1
        if y1 > h - 1:
            y1 = h - 1
        boxes[j, 0] = x0
        boxes[j, 1] = x1
        boxes[j, 2] = y0
        boxes[j, 3] = y1
        ok[j] = 1
        for yy in range(y0, y1 + 1):
            base = yy * w
            for xx in range(x0, x1 + 1):
                offsets[base + xx + 1] += 1
    for p in range(npx):
        offsets[p + 1] += offsets[p]
    ids = np.empty(offsets[npx], dtype=np.int32)
    cursor = offsets[:npx].copy()
    for j in range(n):
        if ok[j] == 0:
            continue
        x0 = boxes[j, 0]
        x1 = boxes[j, 1]
        y0 = boxes[j, 2]
        y1 = boxes[j, 3]
        for yy in range(y0, y1 + 1):
            base = yy * w
            for xx in range(x0, x1 + 1):
                ids[cursor[base + xx]] = j
                cursor[base + xx] += 1
    return offsets, ids


@njit(cache=True, inline="always")
def _field_value_range(t, d0, d1, d2, cand_j, cand_t, end, rmax,
                       centers, normals, coeffs, supports):
    """Field value at ray point t*d over cluster kernels 0..end.

    Only kernels whose projected ray parameter lies within rmax of t can
    contribute, so the t-sorted candidate list is narrowed by binary search.
    """
    lo_i = np.searchsorted(cand_t[:end + 1], t - rmax, side="left")
    hi_i = np.searchsorted(cand_t[:end + 1], t + rmax, side="right") - 1
    px = t * d0
    py = t * d1
    pz = t * d2
    val = 0.0
    for k in range(lo_i, hi_i + 1):
        j = cand_j[k]
        y0 = px - centers[j, 0]
        y1 = py - centers[j, 1]
        y2 = pz - centers[j, 2]
        r = supports[j]
        dd = y0 * y0 + y1 * y1 + y2 * y2
        if dd >= r * r:
            continue
        s = np.sqrt(dd) / r
        one = 1.0 - s
        phi = -20.0 * one * one * one / (r * r)
        u = normals[j, 0] * y0 + normals[j, 1] * y1 + normals[j, 2] * y2
        val += -coeffs[j] * phi * u
    return val


@njit(cache=True)
def _raycast_core(offsets, ids, centers, normals, coeffs, supports,
                  fx, fy, cx, cy, w, h,
                  gap_min, gap_factor, n_probe, tol, max_iter,
                  grad_floor, kappa_clamp, t_min,
                  out_v, out_n, out_k, out_rel, out_grad, out_near, out_t):
    maxc = 0
    for p in range(h * w):
        c = offsets[p + 1] - offsets[p]
        if c > maxc:
            maxc = c
    cand_t = np.empty(maxc)
    cand_j = np.empty(maxc, dtype=np.int64)
    cand_s = np.empty(maxc)
    for py_i in range(h):
        for px_i in range(w):
            p = py_i * w + px_i
            a = offsets[p]
            b = offsets[p + 1]
            if a == b:
                continue
            dx = (px_i - cx) / fx
            dy = (py_i - cy) / fy
            inv = 1.0 / np.sqrt(dx * dx + dy * dy + 1.0)
            d0 = dx * inv
            d1 = dy * inv
            d2 = inv
            kept = 0
            for ii in range(a, b):
                j = ids[ii]
                c0 = centers[j, 0]
                c1 = centers[j, 1]
                c2 = centers[j, 2]
                t = c0 * d0 + c1 * d1 + c2 * d2
                if t <= t_min:
                    continue
                r = supports[j]
                perp2 = c0 * c0 + c1 * c1 + c2 * c2 - t * t
                if perp2 <= r * r:
                    cand_t[kept] = t
                    cand_j[kept] = j
                    kept += 1
            if kept == 0:
                continue
            order = np.argsort(cand_t[:kept])
            # reorder in place via scratch copies
            tmp_t = cand_t[:kept].copy()
            tmp_j = cand_j[:kept].copy()
            for k in range(kept):
                o = order[k]
                cand_t[k] = tmp_t[o]
                cand_j[k] = tmp_j[o]
                cand_s[k] = supports[tmp_j[o]]
            med = np.median(cand_s[:kept])
            gap = gap_min
            if gap_factor * med > gap:
                gap = gap_factor * med
            end = 0
            while end + 1 < kept and cand_t[end + 1] - cand_t[end] < gap:
                end += 1
            rmax = 0.0
            for k in range(end + 1):
                if cand_s[k] > rmax:
                    rmax = cand_s[k]
            t_n = cand_t[0] - rmax
            t_f = cand_t[end] + rmax
            if t_n < t_min:
                t_n = t_min
            if t_f <= t_n:
                continue
            # probe for the first positive-to-nonpositive transition
            step = (t_f - t_n) / (n_probe - 1)
            prev_t = t_n
            prev_f = _field_value_range(t_n, d0, d1, d2, cand_j, cand_t,
                                        end, rmax,
                                        centers, normals, coeffs, supports)
            lo = -1.0
            hi = -1.0
            for k in range(1, n_probe):
                tt = t_n + step * k
                f = _field_value_range(tt, d0, d1, d2, cand_j, cand_t,
                                       end, rmax,
                                       centers, normals, coeffs, supports)
                if prev_f > 0.0 and f <= 0.0:
                    lo = prev_t
                    hi = tt
                    break
                prev_t = tt
                prev_f = f
            if lo < 0.0:
                continue
            it = 0
            while hi - lo > tol and it < max_iter:
                mid = 0.5 * (lo + hi)
                f = _field_value_range(mid, d0, d1, d2, cand_j, cand_t,
                                       end, rmax,
                                       centers, normals, coeffs, supports)
                if f > 0.0:
                    lo = mid
                else:
                    hi = mid
                it += 1
            t_star = 0.5 * (lo + hi)
            hx = t_star * d0
            hy = t_star * d1
            hz = t_star * d2
            lo_i = np.searchsorted(cand_t[:end + 1], t_star - rmax, side="left")
            hi_i = np.searchsorted(cand_t[:end + 1], t_star + rmax,
                                   side="right") - 1
            val, g0, g1, g2, h00, h01, h02, h11, h12, h22, used = _eval_core(
                hx, hy, hz, centers, normals, coeffs, supports,
                cand_j[lo_i:hi_i + 1], hi_i + 1 - lo_i, True)
            gnorm = np.sqrt(g0 * g0 + g1 * g1 + g2 * g2)
            if used == 0 or gnorm < grad_floor:
                continue
            n0 = g0 / gnorm
            n1 = g1 / gnorm
            n2 = g2 / gnorm
            if n0 * d0 + n1 * d1 + n2 * d2 > 0.0:
                n0 = -n0
                n1 = -n1
                n2 = -n2
            k1, k2, mean, gauss, rel = _principal_curvatures(
                g0, g1, g2, h00, h01, h02, h11, h12, h22,
                grad_floor, kappa_clamp)
            best = -1
            bestd = np.inf
            for k in range(end + 1):
                j = cand_j[k]
                q0 = centers[j, 0] - hx
                q1 = centers[j, 1] - hy
                q2 = centers[j, 2] - hz
                dd = q0 * q0 + q1 * q1 + q2 * q2
                if dd < bestd:
                    bestd = dd
                    best = j
            out_v[py_i, px_i, 0] = hx
            out_v[py_i, px_i, 1] = hy
            out_v[py_i, px_i, 2] = hz
            out_n[py_i, px_i, 0] = n0
            out_n[py_i, px_i, 1] = n1
            out_n[py_i, px_i, 2] = n2
            out_k[py_i, px_i, 0] = k1
            out_k[py_i, px_i, 1] = k2
            out_rel[py_i, px_i] = 1 if rel else 0
            out_grad[py_i, px_i, 0] = g0
            out_grad[py_i, px_i, 1] = g1
            out_grad[py_i, px_i, 2] = g2
            out_near[py_i, px_i] = best
            out_t[py_i, px_i] = t_star


@njit(cache=True)
def _splat_core(offsets, ids, centers, normals, supports,
                fx, fy, cx, cy, w, h, t_min,
                out_v, out_n, out_near, out_t):
    for py_i in range(h):
        for px_i in range(w):
            p = py_i * w + px_i
            a = offsets[p]
            b = offsets[p + 1]
            if a == b:
                continue
            dx = (px_i - cx) / fx
            dy = (py_i - cy) / fy
            inv = 1.0 / np.sqrt(dx * dx + dy * dy + 1.0)
            d0 = dx * inv
            d1 = dy * inv
            d2 = inv
            best = -1
            best_t = np.inf
            bx = 0.0
            by = 0.0
            bz = 0.0
            for ii in range(a, b):
                j = ids[ii]
                n0 = normals[j, 0]
                n1 = normals[j, 1]
                n2 = normals[j, 2]
                denom = n0 * d0 + n1 * d1 + n2 * d2
                if denom > -1e-12 and denom < 1e-12:
                    continue
                num = (n0 * centers[j, 0] + n1 * centers[j, 1]
                       + n2 * centers[j, 2])
                t = num / denom
                if t <= t_min or t >= best_t:
                    continue
                qx = t * d0 - centers[j, 0]
                qy = t * d1 - centers[j, 1]
                qz = t * d2 - centers[j, 2]
                r = supports[j]
                if qx * qx + qy * qy + qz * qz <= r * r:
                    best = j
                    best_t = t
                    bx = t * d0
                    by = t * d1
                    bz = t * d2
            if best < 0:
                continue
            n0 = normals[best, 0]
            n1 = normals[best, 1]
            n2 = normals[best, 2]
            if n0 * d0 + n1 * d1 + n2 * d2 > 0.0:
                n0 = -n0
                n1 = -n1
                n2 = -n2
            out_v[py_i, px_i, 0] = bx
            out_v[py_i, px_i, 1] = by
            out_v[py_i, px_i, 2] = bz
            out_n[py_i, px_i, 0] = n0
            out_n[py_i, px_i, 1] = n1
            out_n[py_i, px_i, 2] = n2
            out_near[py_i, px_i] = best
            out_t[py_i, px_i] = best_t


def _alloc_outputs(h, w):
    return (np.full((h, w, 3), np.nan), np.full((h, w, 3), np.nan),
            np.full((h, w, 2), np.nan), np.zeros((h, w), dtype=np.uint8),
            np.full((h, w, 3), np.nan), np.full((h, w), -1, dtype=np.int64),
            np.full((h, w), np.nan))


def _raycast_camera_frame(cam_centers, cam_normals, supports, eta, intr, params):
    """Run the batched raycast with kernels already in camera coordinates."""
    cam_centers = np.ascontiguousarray(cam_centers, dtype=np.float64)
    cam_normals = np.ascontiguousarray(cam_normals, dtype=np.float64)
    supports = np.ascontiguousarray(supports, dtype=np.float64)
    r2 = supports * supports
    coeffs = r2 / (20.0 + eta * r2)
    h, w = intr.height, intr.width
    out = _alloc_outputs(h, w)
    out_v, out_n, out_k, out_rel, out_grad, out_near, out_t = out
    if len(supports):
        offsets, ids = _pixel_bins(cam_centers, supports,
                                   intr.fx, intr.fy, intr.cx, intr.cy,
                                   w, h, params.t_min)
        _raycast_core(offsets, ids, cam_centers, cam_normals, coeffs, supports,
                      intr.fx, intr.fy, intr.cx, intr.cy, w, h,
                      params.gap_min, params.gap_factor, params.n_probe,
                      params.bisect_tol, params.bisect_max_iter,
                      params.grad_floor, params.kappa_clamp, params.t_min,
                      out_v, out_n, out_k, out_rel, out_grad, out_near, out_t)
    return out


def select_ray_kernels(ray, ks, gap_min=0.1, gap_factor=2.0, t_min=1e-6):
    """Kernels whose support sphere meets the ray, keeping the cluster of
    projected ray parameters nearest the origin.

    Returns (kernel_indices ascending, (t_n, t_f)) where the interval spans
    the kept cluster padded by its largest support; (empty, None) when no
    support sphere meets the ray.
    """
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    if len(ks) == 0:
        return np.empty(0, dtype=np.int64), None
    oc = ks.centers - o
    t = oc @ d
    perp2 = np.einsum("ij,ij->i", oc, oc) - t * t
    hit = (perp2 <= ks.supports ** 2) & (t > t_min)
    idx = np.nonzero(hit)[0]
    if len(idx) == 0:
        return np.empty(0, dtype=np.int64), None
    ts = t[idx]
    order = np.argsort(ts, kind="stable")
    ts_sorted = ts[order]
    gap = max(gap_min, gap_factor * float(np.median(ks.supports[idx])))
    end = 0
    while end + 1 < len(ts_sorted) and ts_sorted[end + 1] - ts_sorted[end] < gap:
        end += 1
    cluster = idx[order[:end + 1]]
    rmax = float(ks.supports[cluster].max())
    t_n = max(float(ts_sorted[0]) - rmax, t_min)
    t_f = float(ts_sorted[end]) + rmax
    return np.sort(cluster), (t_n, t_f)


def bisect_surface(ray, interval, ks, indices=None,
                   n_probe=8, tol=1e-5, max_iter=32):
    """First positive-to-negative field crossing on the ray inside the interval.

    The field is summed over `indices` (default: all kernels). Returns the
    3D intersection point, or None when no sign change exists.
    """
    o = np.asarray(ray.origin, dtype=np.float64)
    d = np.asarray(ray.direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    if indices is None:
        indices = np.arange(len(ks), dtype=np.int64)
    else:
        indices = np.sort(np.asarray(indices, dtype=np.int64))
    if len(indices) == 0 or interval is None:
        return None
    t_n, t_f = float(interval[0]), float(interval[1])
    if not t_f > t_n:
        return None

    def value(tt):
        p = o + tt * d
        v = _eval_core(p[0], p[1], p[2], ks.centers, ks.normals, ks.coeffs,
                       ks.supports, indices, len(indices), False)
        return v[0]

    lo = hi = None
    prev_t = t_n
    prev_f = value(t_n)
    for k in range(1, n_probe):
        tt = t_n + (t_f - t_n) * k / (n_probe - 1)
        f = value(tt)
        if prev_f > 0.0 and f <= 0.0:
            lo, hi = prev_t, tt
            break
        prev_t, prev_f = tt, f
    if lo is None:
        return None
    it = 0
    while hi - lo > tol and it < max_iter:
        mid = 0.5 * (lo + hi)
        if value(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return o + 0.5 * (lo + hi) * d


def predict_model_maps(model, pose, intr, params=PredictionParams()):
    """Cast every pixel ray against the global model's HRBF field.

    Vertices/normals are returned in world coordinates; color, confidence and
    support are copied from the kernel nearest each hit.
    """
    inv = invert_se3(pose)
    cam_centers = transform_points(inv, model.positions)
    cam_normals = rotate_vectors(inv, model.normals)
    out_v, out_n, out_k, out_rel, out_grad, out_near, out_t = _raycast_camera_frame(
        cam_centers, cam_normals, model.supports, params.eta, intr, params)
    return _assemble_predicted(model, pose, intr,
                               out_v, out_n, out_k, out_near)


def _assemble_predicted(model, pose, intr, out_v, out_n, out_k, out_near):
    h, w = intr.height, intr.width
    valid = np.isfinite(out_v[..., 2]) & np.isfinite(out_n[..., 2])
    world_v = np.full((h, w, 3), np.nan)
    world_n = np.full((h, w, 3), np.nan)
    world_v[valid] = transform_points(pose, out_v[valid])
    world_n[valid] = rotate_vectors(pose, out_n[valid])
    conf = np.full((h, w), np.nan)
    colors = np.full((h, w, 3), np.nan)
    sup = np.full((h, w), np.nan)
    near = out_near.copy()
    near[~valid] = -1
    sel = near >= 0
    if np.any(sel):
        conf[sel] = model.confidence[near[sel]]
        colors[sel] = model.colors[near[sel]]
        sup[sel] = model.supports[near[sel]]
    intensity = np.full((h, w), np.nan)
    intensity[sel] = luminance(colors[sel])
    return PredictedMaps(vertices=world_v, normals=world_n, curvature=out_k,
                         confidence=conf, colors=colors, intensity=intensity,
                         supports=sup, nearest=near, valid=valid,
                         pose=np.array(pose, dtype=np.float64))


def splat_baseline(model, pose, intr, params=PredictionParams()):
    """Surfel-splatting prediction: nearest ray-disc intersection per pixel."""
    inv = invert_se3(pose)
    cam_centers = np.ascontiguousarray(transform_points(inv, model.positions))
    cam_normals = np.ascontiguousarray(rotate_vectors(inv, model.normals))
    supports = np.ascontiguousarray(model.supports, dtype=np.float64)
    h, w = intr.height, intr.width
    out_v, out_n, out_k, out_rel, out_grad, out_near, out_t = _alloc_outputs(h, w)
    if len(supports):
        offsets, ids = _pixel_bins(cam_centers, supports,
                                   intr.fx, intr.fy, intr.cx, intr.cy,
                                   w, h, params.t_min)
        _splat_core(offsets, ids, cam_centers, cam_normals, supports,
                    intr.fx, intr.fy, intr.cx, intr.cy, w, h, params.t_min,
                    out_v, out_n, out_near, out_t)
    return _assemble_predicted(model, pose, intr, out_v, out_n, out_k, out_near)


def predict_frame_maps(frame, params=PredictionParams(),
                       conf_epsilon=1000.0, conf_sigma=0.6):
    """Refine a preprocessed frame against its own field (self-evaluation).

    Vertices and normals are replaced where the cast succeeds (raw values are
    kept elsewhere), and the curvature and confidence maps are filled in.
    Returns the same frame object.
    """
    kmask = (np.isfinite(frame.vertices[..., 2])
             & np.isfinite(frame.depth_normals[..., 2])
             & np.isfinite(frame.supports))
    h, w = frame.supports.shape
    if np.any(kmask):
        out_v, out_n, out_k, out_rel, out_grad, out_near, out_t = \
            _raycast_camera_frame(frame.vertices[kmask],
                                  frame.depth_normals[kmask],
                                  frame.supports[kmask],
                                  params.eta, frame.intrinsics, params)
    else:
        out_v, out_n, out_k, out_rel, out_grad, out_near, out_t = \
            _alloc_outputs(h, w)
    refined = np.isfinite(out_v[..., 2]) & np.isfinite(out_n[..., 2])
    vertices = np.where(refined[..., None], out_v, frame.vertices)
    normals = np.where(refined[..., None], out_n, frame.depth_normals)
    frame.vertices = vertices
    frame.normals = normals
    frame.curvature = out_k
    frame.curvature_reliable = out_rel.astype(bool)
    frame.refined = refined
    frame.field_gradient = out_grad
    frame.confidence = confidence_map(frame, out_grad,
                                      epsilon=conf_epsilon, sigma=conf_sigma)
    return frame
