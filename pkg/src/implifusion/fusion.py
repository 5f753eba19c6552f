"""Global surfel model: confidence-weighted merging, insertion and culling.

Fusion associates frame pixels to surfels through a supersampled index map
rendered at the registered pose (4x4 subpixel block per pixel), gates matches
by depth-scaled distance and normal angle, then merges with a running
confidence-weighted average. Pixels with no acceptable match become new
surfels; low-confidence surfels past their probation window are culled.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import invert_se3, transform_points, rotate_vectors
from .field import KernelSet


@dataclass(frozen=True)
class FusionConfig:
    delta_merge: float = 0.01       # meters per meter of depth
    theta_merge_deg: float = 20.0
    c_stable: float = 10.0
    t_unstable: int = 20
    supersample: int = 4
    t_min: float = 0.05


class GlobalModel:
    """Growable surfel store; the kernel-set spatial index is rebuilt lazily
    after mutations."""

    def __init__(self, eta=1.0e6):
        self.eta = eta
        self.positions = np.empty((0, 3))
        self.normals = np.empty((0, 3))
        self.colors = np.empty((0, 3))
        self.supports = np.empty(0)
        self.confidence = np.empty(0)
        self.created = np.empty(0, dtype=np.int64)
        self.updated = np.empty(0, dtype=np.int64)
        self._kernel_set = None

    def __len__(self):
        return len(self.supports)

    def invalidate(self):
        self._kernel_set = None

    def append(self, positions, normals, colors, supports, confidence,
               frame_idx=0):
        """Insert surfels directly; normals are assumed unit length."""
        n = len(supports)
        self.positions = np.concatenate(
            [self.positions, np.reshape(positions, (n, 3))])
        self.normals = np.concatenate(
            [self.normals, np.reshape(normals, (n, 3))])
        self.colors = np.concatenate(
            [self.colors, np.reshape(colors, (n, 3))])
        self.supports = np.concatenate(
            [self.supports, np.reshape(supports, n)])
        self.confidence = np.concatenate(
            [self.confidence, np.reshape(confidence, n)])
        idx = np.full(n, frame_idx, dtype=np.int64)
        self.created = np.concatenate([self.created, idx])
        self.updated = np.concatenate([self.updated, idx])
        self.invalidate()

    def as_kernel_set(self):
        if self._kernel_set is None:
            self._kernel_set = KernelSet(self.positions, self.normals,
                                         self.supports, eta=self.eta)
        return self._kernel_set


@njit(cache=True)
def _render_index_map(cam_pts, fx, fy, cx, cy, W, H, scale, t_min,
                      imap, zmap):
    n = cam_pts.shape[0]
    W4 = W * scale
    H4 = H * scale
    for j in range(n):
        z = cam_pts[j, 2]
        if z <= t_min:
            continue
        px = fx * cam_pts[j, 0] / z + cx
        py = fy * cam_pts[j, 1] / z + cy
        gx = int(np.rint(px * scale))
        gy = int(np.rint(py * scale))
        if gx < 0 or gx >= W4 or gy < 0 or gy >= H4:
            continue
        if z < zmap[gy, gx]:
            zmap[gy, gx] = z
            imap[gy, gx] = j


@njit(cache=True)
def _merge_core(imap, verts, norms, conf, sups, cols, valid,
                T, delta_merge, cos_merge, scale, frame_idx,
                s_pos, s_norm, s_col, s_sup, s_conf, s_upd,
                matched):
    H, W = valid.shape
    H4 = H * scale
    W4 = W * scale
    for v in range(H):
        for u in range(W):
            if valid[v, u] == 0:
                continue
            p0 = verts[v, u, 0]
            p1 = verts[v, u, 1]
            p2 = verts[v, u, 2]
            x0 = T[0, 0] * p0 + T[0, 1] * p1 + T[0, 2] * p2 + T[0, 3]
            x1 = T[1, 0] * p0 + T[1, 1] * p1 + T[1, 2] * p2 + T[1, 3]
            x2 = T[2, 0] * p0 + T[2, 1] * p1 + T[2, 2] * p2 + T[2, 3]
            m0 = norms[v, u, 0]
            m1 = norms[v, u, 1]
            m2 = norms[v, u, 2]
            n0 = T[0, 0] * m0 + T[0, 1] * m1 + T[0, 2] * m2
            n1 = T[1, 0] * m0 + T[1, 1] * m1 + T[1, 2] * m2
            n2 = T[2, 0] * m0 + T[2, 1] * m1 + T[2, 2] * m2
            thr = delta_merge * p2
            best = -1
            bestd = np.inf
            gy0 = v * scale
            gx0 = u * scale
            for gy in range(gy0, gy0 + scale):
                if gy < 0 or gy >= H4:
                    continue
                for gx in range(gx0, gx0 + scale):
                    if gx < 0 or gx >= W4:
                        continue
                    j = imap[gy, gx]
                    if j < 0:
                        continue
                    q0 = s_pos[j, 0] - x0
                    q1 = s_pos[j, 1] - x1
                    q2 = s_pos[j, 2] - x2
                    d = np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
                    if d >= thr:
                        continue
                    cosang = (n0 * s_norm[j, 0] + n1 * s_norm[j, 1]
                              + n2 * s_norm[j, 2])
                    if cosang < cos_merge:
                        continue
                    if d < bestd:
                        bestd = d
                        best = j
            if best < 0:
                continue
            cb = s_conf[best]
            c = conf[v, u]
            tot = cb + c
            w0 = cb / tot
            w1 = c / tot
            a0 = w0 * s_norm[best, 0] + w1 * n0
            a1 = w0 * s_norm[best, 1] + w1 * n1
            a2 = w0 * s_norm[best, 2] + w1 * n2
            alen = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
            if alen < 1e-6:
                matched[v, u] = 1   # match found but normals cancel: skip
                continue
            s_pos[best, 0] = w0 * s_pos[best, 0] + w1 * x0
            s_pos[best, 1] = w0 * s_pos[best, 1] + w1 * x1
            s_pos[best, 2] = w0 * s_pos[best, 2] + w1 * x2
            s_norm[best, 0] = a0 / alen
            s_norm[best, 1] = a1 / alen
            s_norm[best, 2] = a2 / alen
            s_col[best, 0] = w0 * s_col[best, 0] + w1 * cols[v, u, 0]
            s_col[best, 1] = w0 * s_col[best, 1] + w1 * cols[v, u, 1]
            s_col[best, 2] = w0 * s_col[best, 2] + w1 * cols[v, u, 2]
            if sups[v, u] < s_sup[best]:
                s_sup[best] = sups[v, u]
            s_conf[best] = tot
            s_upd[best] = frame_idx
            matched[v, u] = 1


def _fusion_inputs(frame):
    verts = np.ascontiguousarray(frame.vertices, dtype=np.float64)
    norms = np.ascontiguousarray(frame.normals, dtype=np.float64)
    conf = frame.confidence
    if conf is None:
        conf = np.ones(verts.shape[:2])
    conf = np.ascontiguousarray(conf, dtype=np.float64)
    sups = np.ascontiguousarray(frame.supports, dtype=np.float64)
    if frame.color is not None:
        cols = np.ascontiguousarray(frame.color, dtype=np.float64)
        if cols.max() > 1.5:
            cols = cols / 255.0
    else:
        cols = np.full(verts.shape, 0.5)
    valid = (np.isfinite(verts[..., 2]) & np.isfinite(norms[..., 2])
             & np.isfinite(conf) & (conf > 0.0) & np.isfinite(sups))
    return verts, norms, conf, sups, cols, valid.astype(np.uint8)


def integrate(model, frame, pose, frame_idx, predicted=None,
              cfg=FusionConfig()):
    """Merge a registered frame into the model, inserting unmatched pixels.

    Association is projective: surfels are splatted into a supersampled
    index map at the registered pose, each pixel searches its subpixel
    block, and the nearest surfel within the depth-scaled distance gate and
    the normal angle gate wins. Returns the model.
    """
    verts, norms, conf, sups, cols, valid = _fusion_inputs(frame)
    intr = frame.intrinsics
    h, w = valid.shape
    T = np.ascontiguousarray(pose, dtype=np.float64)
    matched = np.zeros((h, w), dtype=np.uint8)
    if len(model):
        inv = invert_se3(T)
        cam_pts = np.ascontiguousarray(transform_points(inv, model.positions))
        sc = cfg.supersample
        imap = np.full((h * sc, w * sc), -1, dtype=np.int64)
        zmap = np.full((h * sc, w * sc), np.inf)
        _render_index_map(cam_pts, intr.fx, intr.fy, intr.cx, intr.cy,
                          w, h, sc, cfg.t_min, imap, zmap)
        _merge_core(imap, verts, norms, conf, sups, cols, valid,
                    T, cfg.delta_merge,
                    np.cos(np.deg2rad(cfg.theta_merge_deg)), sc, frame_idx,
                    model.positions, model.normals, model.colors,
                    model.supports, model.confidence, model.updated,
                    matched)
    insert = (valid > 0) & (matched == 0)
    if np.any(insert):
        model.append(transform_points(T, verts[insert]),
                     rotate_vectors(T, norms[insert]), cols[insert],
                     sups[insert], conf[insert], frame_idx)
    model.invalidate()
    return model


def cull(model, frame_idx, cfg=FusionConfig()):
    """Drop surfels past the probation window that never became stable."""
    if not len(model):
        return model
    age = frame_idx - model.created
    keep = (model.confidence >= cfg.c_stable) | (age <= cfg.t_unstable)
    if not np.all(keep):
        model.positions = model.positions[keep]
        model.normals = model.normals[keep]
        model.colors = model.colors[keep]
        model.supports = model.supports[keep]
        model.confidence = model.confidence[keep]
        model.created = model.created[keep]
        model.updated = model.updated[keep]
        model.invalidate()
    return model
