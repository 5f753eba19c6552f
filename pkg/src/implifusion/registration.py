"""Frame-to-model camera pose estimation.

Projective data association scores window candidates by a three-part
dissimilarity (distance, normal angle, curvature difference); accepted pairs
are weighted by target confidence, inverse depth squared and curvature
magnitude. The pose is found by Gauss-Newton over a left-multiplied twist,
minimizing a weighted point-to-plane term plus a Huber-robustified
photometric term, re-associating after every accepted step.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .camera import invert_se3, se3_exp


@dataclass(frozen=True)
class RegistrationConfig:
    window: int = 5
    mu_d: float = 1.0 / 3.0
    mu_a: float = 1.0 / 3.0
    mu_c: float = 1.0 / 3.0
    w_geom: float = 10.0
    max_iterations: int = 20
    prune_distance: float = 0.1
    prune_angle_deg: float = 20.0
    kappa_ref: float = 20.0
    z_ref: float = 1.0
    weight_floor: float = 0.5
    huber_delta: float = 0.1
    photo_depth_gap: float = 0.3
    update_eps: float = 1e-7
    cond_max: float = 1e12
    use_photometric: bool = True
    min_correspondences: int = 6

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("search window must be odd and positive")


@dataclass
class CorrespondenceSet:
    """Pixel pairs (linear indices) with dissimilarity and residual weight."""

    src: np.ndarray      # (m,) int64 linear source pixels
    tgt: np.ndarray      # (m,) int64 linear target pixels
    gamma: np.ndarray    # (m,) dissimilarity of the kept pair
    weight: np.ndarray   # (m,) residual weight of the kept pair

    def __len__(self):
        return len(self.src)


@dataclass
class RegistrationResult:
    pose: np.ndarray
    iterations: int
    mean_residual: float
    converged: bool
    failure: bool
    failure_reason: str
    condition_number: float
    degenerate_directions: np.ndarray   # (k, 6) twist directions, empty if none
    num_correspondences: int
    objective_steps: list = field(default_factory=list)  # (before, after) pairs


def dissimilarity(src_vertex, src_normal, src_kappa,
                  tgt_vertex, tgt_normal, tgt_kappa, r_max,
                  mu_d=1.0 / 3.0, mu_a=1.0 / 3.0, mu_c=1.0 / 3.0):
    """Three-part candidate score: smaller is a better match.

    Distance is normalized by the farthest window candidate, the normal term
    is 1 - cos, and the curvature term compares principal curvatures relative
    to the candidate's own magnitude (denominator floored at 1e-6).
    """
    sv = np.asarray(src_vertex, dtype=np.float64)
    tv = np.asarray(tgt_vertex, dtype=np.float64)
    sn = np.asarray(src_normal, dtype=np.float64)
    tn = np.asarray(tgt_normal, dtype=np.float64)
    i_d = np.linalg.norm(sv - tv) / max(float(r_max), 1e-12)
    i_a = 1.0 - float(sn @ tn)
    dk = abs(src_kappa[0] - tgt_kappa[0]) + abs(src_kappa[1] - tgt_kappa[1])
    den = max(abs(tgt_kappa[0]), abs(tgt_kappa[1]), 1e-6)
    i_c = 1.0 - np.exp(-dk / den)
    return mu_d * i_d + mu_a * i_a + mu_c * i_c


def residual_weight(confidence, kappa1, kappa2, depth,
                    kappa_ref=20.0, z_ref=1.0, floor=0.5):
    """Per-pair weight: confidence times inverse depth squared times a
    curvature factor saturating at 1 and floored so flat regions still
    constrain the pose."""
    kfac = min(1.0, (abs(kappa1) + abs(kappa2)) / kappa_ref)
    if kfac < floor:
        kfac = floor
    return float(confidence) * (z_ref / depth) ** 2 * kfac


@njit(cache=True)
def _associate_core(sverts, svalid, snorm, skap,
                    tverts, tvalid, tnorm, tkap, tconf,
                    T, Tpinv, fx, fy, cx, cy, W, H,
                    half, eps_d, cos_min, mu_d, mu_a, mu_c,
                    kref, zref, wfloor,
                    out_tgt, out_gamma, out_w):
    for r in range(H):
        for c in range(W):
            out_tgt[r, c] = -1
            if svalid[r, c] == 0:
                continue
            v0 = sverts[r, c, 0]
            v1 = sverts[r, c, 1]
            v2 = sverts[r, c, 2]
            x0 = T[0, 0] * v0 + T[0, 1] * v1 + T[0, 2] * v2 + T[0, 3]
            x1 = T[1, 0] * v0 + T[1, 1] * v1 + T[1, 2] * v2 + T[1, 3]
            x2 = T[2, 0] * v0 + T[2, 1] * v1 + T[2, 2] * v2 + T[2, 3]
            y0 = Tpinv[0, 0] * x0 + Tpinv[0, 1] * x1 + Tpinv[0, 2] * x2 + Tpinv[0, 3]
            y1 = Tpinv[1, 0] * x0 + Tpinv[1, 1] * x1 + Tpinv[1, 2] * x2 + Tpinv[1, 3]
            y2 = Tpinv[2, 0] * x0 + Tpinv[2, 1] * x1 + Tpinv[2, 2] * x2 + Tpinv[2, 3]
            if y2 <= 1e-9:
                continue
            px = fx * y0 / y2 + cx
            py = fy * y1 / y2 + cy
            ic = int(np.rint(px))
            ir = int(np.rint(py))
            if ic < 0 or ic >= W or ir < 0 or ir >= H:
                continue
            n0 = snorm[r, c, 0]
            n1 = snorm[r, c, 1]
            n2 = snorm[r, c, 2]
            nw0 = T[0, 0] * n0 + T[0, 1] * n1 + T[0, 2] * n2
            nw1 = T[1, 0] * n0 + T[1, 1] * n1 + T[1, 2] * n2
            nw2 = T[2, 0] * n0 + T[2, 1] * n1 + T[2, 2] * n2
            sk1 = skap[r, c, 0]
            sk2 = skap[r, c, 1]
            # farthest valid candidate sets the distance normalizer
            rmax = 0.0
            found = False
            for dr in range(-half, half + 1):
                rr = ir + dr
                if rr < 0 or rr >= H:
                    continue
                for dc in range(-half, half + 1):
                    cc = ic + dc
                    if cc < 0 or cc >= W:
                        continue
                    if tvalid[rr, cc] == 0:
                        continue
                    q0 = tverts[rr, cc, 0] - x0
                    q1 = tverts[rr, cc, 1] - x1
                    q2 = tverts[rr, cc, 2] - x2
                    d = np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
                    if d > rmax:
                        rmax = d
                    found = True
            if not found:
                continue
            if rmax < 1e-12:
                rmax = 1e-12
            best_g = np.inf
            best_rr = -1
            best_cc = -1
            best_d = 0.0
            best_cos = -1.0
            for dr in range(-half, half + 1):
                rr = ir + dr
                if rr < 0 or rr >= H:
                    continue
                for dc in range(-half, half + 1):
                    cc = ic + dc
                    if cc < 0 or cc >= W:
                        continue
                    if tvalid[rr, cc] == 0:
                        continue
                    q0 = tverts[rr, cc, 0] - x0
                    q1 = tverts[rr, cc, 1] - x1
                    q2 = tverts[rr, cc, 2] - x2
                    d = np.sqrt(q0 * q0 + q1 * q1 + q2 * q2)
                    cosang = (nw0 * tnorm[rr, cc, 0] + nw1 * tnorm[rr, cc, 1]
                              + nw2 * tnorm[rr, cc, 2])
                    dk = abs(sk1 - tkap[rr, cc, 0]) + abs(sk2 - tkap[rr, cc, 1])
                    den = abs(tkap[rr, cc, 0])
                    if abs(tkap[rr, cc, 1]) > den:
                        den = abs(tkap[rr, cc, 1])
                    if den < 1e-6:
                        den = 1e-6
                    g = (mu_d * (d / rmax) + mu_a * (1.0 - cosang)
                         + mu_c * (1.0 - np.exp(-dk / den)))
                    if g < best_g:
                        best_g = g
                        best_rr = rr
                        best_cc = cc
                        best_d = d
                        best_cos = cosang
            if best_rr < 0:
                continue
            if best_d > eps_d or best_cos < cos_min:
                continue
            b0 = tverts[best_rr, best_cc, 0]
            b1 = tverts[best_rr, best_cc, 1]
            b2 = tverts[best_rr, best_cc, 2]
            zb = Tpinv[2, 0] * b0 + Tpinv[2, 1] * b1 + Tpinv[2, 2] * b2 + Tpinv[2, 3]
            if zb <= 1e-9:
                continue
            kfac = (abs(tkap[best_rr, best_cc, 0])
                    + abs(tkap[best_rr, best_cc, 1])) / kref
            if kfac > 1.0:
                kfac = 1.0
            if kfac < wfloor:
                kfac = wfloor
            w = tconf[best_rr, best_cc] * (zref / zb) * (zref / zb) * kfac
            if not np.isfinite(w):
                continue
            out_tgt[r, c] = best_rr * W + best_cc
            out_gamma[r, c] = best_g
            out_w[r, c] = w


@njit(cache=True, inline="always")
def _bilinear_grad(m, px, py, W, H):
    """Bilinear sample plus the exact in-cell gradient of the interpolant,
    so analytic Jacobians differentiate the same function the residual uses.
    Returns (value, d/dpx, d/dpy); NaNs when a corner is missing."""
    x0 = int(np.floor(px))
    y0 = int(np.floor(py))
    if x0 < 0 or y0 < 0 or x0 + 1 >= W or y0 + 1 >= H:
        return np.nan, np.nan, np.nan
    ax = px - x0
    ay = py - y0
    v00 = m[y0, x0]
    v01 = m[y0, x0 + 1]
    v10 = m[y0 + 1, x0]
    v11 = m[y0 + 1, x0 + 1]
    if not (np.isfinite(v00) and np.isfinite(v01)
            and np.isfinite(v10) and np.isfinite(v11)):
        return np.nan, np.nan, np.nan
    val = ((1.0 - ay) * ((1.0 - ax) * v00 + ax * v01)
           + ay * ((1.0 - ax) * v10 + ax * v11))
    gx = (1.0 - ay) * (v01 - v00) + ay * (v11 - v10)
    gy = (1.0 - ax) * (v10 - v00) + ax * (v11 - v01)
    return val, gx, gy


@njit(cache=True)
def _residual_core(sverts, sint, src_lin, tgt_lin,
                   tverts, tnorm, tint,
                   T, Tpinv, fx, fy, cx, cy, W, H, use_photo,
                   geo_r, geo_J, pho_r, pho_J):
    m = len(src_lin)
    for i in range(m):
        u = src_lin[i]
        r = u // W
        c = u % W
        tl = tgt_lin[i]
        tr = tl // W
        tc = tl % W
        v0 = sverts[r, c, 0]
        v1 = sverts[r, c, 1]
        v2 = sverts[r, c, 2]
        x0 = T[0, 0] * v0 + T[0, 1] * v1 + T[0, 2] * v2 + T[0, 3]
        x1 = T[1, 0] * v0 + T[1, 1] * v1 + T[1, 2] * v2 + T[1, 3]
        x2 = T[2, 0] * v0 + T[2, 1] * v1 + T[2, 2] * v2 + T[2, 3]
        n0 = tnorm[tr, tc, 0]
        n1 = tnorm[tr, tc, 1]
        n2 = tnorm[tr, tc, 2]
        geo_r[i] = ((x0 - tverts[tr, tc, 0]) * n0
                    + (x1 - tverts[tr, tc, 1]) * n1
                    + (x2 - tverts[tr, tc, 2]) * n2)
        geo_J[i, 0] = n0
        geo_J[i, 1] = n1
        geo_J[i, 2] = n2
        geo_J[i, 3] = x1 * n2 - x2 * n1
        geo_J[i, 4] = x2 * n0 - x0 * n2
        geo_J[i, 5] = x0 * n1 - x1 * n0
        pho_r[i] = np.nan
        if not use_photo:
            continue
        iu = sint[r, c]
        if not np.isfinite(iu):
            continue
        y0 = Tpinv[0, 0] * x0 + Tpinv[0, 1] * x1 + Tpinv[0, 2] * x2 + Tpinv[0, 3]
        y1 = Tpinv[1, 0] * x0 + Tpinv[1, 1] * x1 + Tpinv[1, 2] * x2 + Tpinv[1, 3]
        y2 = Tpinv[2, 0] * x0 + Tpinv[2, 1] * x1 + Tpinv[2, 2] * x2 + Tpinv[2, 3]
        if y2 <= 1e-9:
            continue
        px = fx * y0 / y2 + cx
        py = fy * y1 / y2 + cy
        ibar, gx, gy = _bilinear_grad(tint, px, py, W, H)
        if not np.isfinite(ibar):
            continue
        # image gradient chained through projection and the previous pose
        a0 = gx * fx / y2
        a1 = gy * fy / y2
        a2 = -(gx * fx * y0 + gy * fy * y1) / (y2 * y2)
        q0 = a0 * Tpinv[0, 0] + a1 * Tpinv[1, 0] + a2 * Tpinv[2, 0]
        q1 = a0 * Tpinv[0, 1] + a1 * Tpinv[1, 1] + a2 * Tpinv[2, 1]
        q2 = a0 * Tpinv[0, 2] + a1 * Tpinv[1, 2] + a2 * Tpinv[2, 2]
        pho_r[i] = ibar - iu
        pho_J[i, 0] = q0
        pho_J[i, 1] = q1
        pho_J[i, 2] = q2
        pho_J[i, 3] = x1 * q2 - x2 * q1
        pho_J[i, 4] = x2 * q0 - x0 * q2
        pho_J[i, 5] = x0 * q1 - x1 * q0


def _occlusion_mask(vertices, pose, gap):
    """True at pixels whose 3x3 neighborhood spans a camera-depth jump.

    Bilinear intensity samples taken across such a jump mix foreground and
    background, so the photometric term must not use them."""
    rot = pose[:3, :3]
    z = (vertices - pose[:3, 3]) @ rot[:, 2]
    h, w = z.shape
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = z
    stack = np.stack([padded[dy:dy + h, dx:dx + w]
                      for dy in range(3) for dx in range(3)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        span = np.nanmax(stack, axis=0) - np.nanmin(stack, axis=0)
    return span > gap


class _TargetMaps:
    """Predicted maps prepared once per solve: cleaned curvature and
    confidence, validity as uint8, intensity masked at occlusion edges."""

    def __init__(self, predicted, use_photometric, depth_gap=0.3):
        self.verts = np.ascontiguousarray(predicted.vertices, dtype=np.float64)
        self.norm = np.ascontiguousarray(predicted.normals, dtype=np.float64)
        self.valid = np.ascontiguousarray(
            (predicted.valid & np.isfinite(self.norm[..., 2])).astype(np.uint8))
        self.kap = np.ascontiguousarray(
            np.nan_to_num(predicted.curvature, nan=0.0, posinf=0.0, neginf=0.0))
        self.conf = np.ascontiguousarray(
            np.nan_to_num(predicted.confidence, nan=0.0))
        pose = np.asarray(predicted.pose, dtype=np.float64)
        if use_photometric and predicted.intensity is not None:
            tint = np.array(predicted.intensity, dtype=np.float64)
            tint[_occlusion_mask(self.verts, pose, depth_gap)] = np.nan
            self.int = np.ascontiguousarray(tint)
        else:
            self.int = np.full(self.conf.shape, np.nan)
        self.pose = np.ascontiguousarray(pose)


def _source_maps(frame):
    sverts = np.ascontiguousarray(frame.vertices, dtype=np.float64)
    snorm = np.ascontiguousarray(frame.normals, dtype=np.float64)
    svalid = np.ascontiguousarray(
        (np.isfinite(sverts[..., 2]) & np.isfinite(snorm[..., 2])).astype(np.uint8))
    if frame.curvature is not None:
        skap = np.ascontiguousarray(
            np.nan_to_num(frame.curvature, nan=0.0, posinf=0.0, neginf=0.0))
    else:
        skap = np.zeros(sverts.shape[:2] + (2,))
    if frame.intensity is not None:
        sint = np.ascontiguousarray(frame.intensity, dtype=np.float64)
    else:
        sint = np.full(sverts.shape[:2], np.nan)
    return sverts, svalid, snorm, skap, sint


def _run_associate(sverts, svalid, snorm, skap, tm, pose, intr, cfg):
    h, w = svalid.shape
    out_tgt = np.full((h, w), -1, dtype=np.int64)
    out_gamma = np.zeros((h, w))
    out_w = np.zeros((h, w))
    Tpinv = invert_se3(tm.pose)
    _associate_core(sverts, svalid, snorm, skap,
                    tm.verts, tm.valid, tm.norm, tm.kap, tm.conf,
                    np.ascontiguousarray(pose, dtype=np.float64), Tpinv,
                    intr.fx, intr.fy, intr.cx, intr.cy, w, h,
                    cfg.window // 2, cfg.prune_distance,
                    np.cos(np.deg2rad(cfg.prune_angle_deg)),
                    cfg.mu_d, cfg.mu_a, cfg.mu_c,
                    cfg.kappa_ref, cfg.z_ref, cfg.weight_floor,
                    out_tgt, out_gamma, out_w)
    keep = out_tgt.ravel() >= 0
    src = np.nonzero(keep)[0].astype(np.int64)
    return CorrespondenceSet(src=src, tgt=out_tgt.ravel()[keep],
                             gamma=out_gamma.ravel()[keep],
                             weight=out_w.ravel()[keep])


def associate(frame, predicted, pose, cfg=RegistrationConfig()):
    """Projective association of frame pixels against predicted maps.

    The frame vertex is transformed by the current pose estimate, projected
    into the camera the prediction was cast from, and matched to the window
    candidate with the lowest dissimilarity, subject to distance and normal
    angle pruning.
    """
    sverts, svalid, snorm, skap, _ = _source_maps(frame)
    tm = _TargetMaps(predicted, use_photometric=False)
    return _run_associate(sverts, svalid, snorm, skap, tm,
                          pose, frame.intrinsics, cfg)


def linearize(frame, predicted, psi, pose, cfg=RegistrationConfig()):
    """Residuals and analytic Jacobians at a pose for a fixed association.

    Returns (geo_residuals, geo_jacobian, photo_residuals, photo_jacobian);
    Jacobians are with respect to a left-multiplied twist increment.
    """
    sverts, svalid, snorm, skap, sint = _source_maps(frame)
    use_photo = cfg.use_photometric and frame.intensity is not None \
        and predicted.intensity is not None
    tm = _TargetMaps(predicted, use_photo, cfg.photo_depth_gap)
    return _residuals(sverts, sint, psi, tm,
                      np.asarray(pose, dtype=np.float64),
                      frame.intrinsics, use_photo)


def _residuals(sverts, sint, psi, tm, pose, intr, use_photo):
    m = len(psi)
    geo_r = np.empty(m)
    geo_J = np.empty((m, 6))
    pho_r = np.empty(m)
    pho_J = np.zeros((m, 6))
    h, w = sint.shape
    _residual_core(sverts, sint, psi.src, psi.tgt,
                   tm.verts, tm.norm, tm.int,
                   np.ascontiguousarray(pose, dtype=np.float64),
                   invert_se3(tm.pose),
                   intr.fx, intr.fy, intr.cx, intr.cy, w, h, use_photo,
                   geo_r, geo_J, pho_r, pho_J)
    return geo_r, geo_J, pho_r, pho_J


def _huber_rho(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, r * r, delta * (2.0 * a - delta))


def _huber_weight(r, delta):
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def _objective(geo_r, pho_r, weights, cfg):
    e = cfg.w_geom * float(np.sum(weights * geo_r * geo_r))
    ok = np.isfinite(pho_r)
    if np.any(ok):
        e += float(np.sum(_huber_rho(pho_r[ok], cfg.huber_delta)))
    return e


def solve_pose(frame, predicted, psi, cfg=RegistrationConfig(),
               initial_pose=None):
    """Gauss-Newton pose refinement against predicted maps.

    `psi` seeds the first iteration; the association is rebuilt after every
    accepted step. Steps are backtracked until the fixed-association
    objective does not increase. Failure (empty association, too few pairs,
    ill-conditioned normal matrix) returns the last accepted pose with the
    failure flag set and any degenerate twist directions reported.
    """
    intr = frame.intrinsics
    sverts, svalid, snorm, skap, sint = _source_maps(frame)
    use_photo = cfg.use_photometric and frame.intensity is not None \
        and predicted.intensity is not None
    tm = _TargetMaps(predicted, use_photo, cfg.photo_depth_gap)
    pose = np.array(predicted.pose if initial_pose is None else initial_pose,
                    dtype=np.float64)

    def fail(reason, cond=np.nan, dirs=None, iters=0, psi_len=0, steps=None):
        return RegistrationResult(
            pose=pose.copy(), iterations=iters, mean_residual=np.nan,
            converged=False, failure=True, failure_reason=reason,
            condition_number=cond,
            degenerate_directions=(np.empty((0, 6)) if dirs is None else dirs),
            num_correspondences=psi_len,
            objective_steps=list(steps or []))

    steps = []
    mean_res = np.nan
    converged = False
    cond = np.nan
    iters = 0
    for it in range(cfg.max_iterations):
        if it > 0 or psi is None:
            psi = _run_associate(sverts, svalid, snorm, skap, tm,
                                 pose, intr, cfg)
        if len(psi) < cfg.min_correspondences:
            return fail("too few correspondences", iters=it,
                        psi_len=len(psi), steps=steps)
        geo_r, geo_J, pho_r, pho_J = _residuals(sverts, sint, psi, tm,
                                                pose, intr, use_photo)
        mean_res = float(np.mean(np.abs(geo_r)))
        wh = _huber_weight(pho_r, cfg.huber_delta)
        wh[~np.isfinite(pho_r)] = 0.0
        pr = np.nan_to_num(pho_r, nan=0.0)
        gw = cfg.w_geom * psi.weight
        Hm = (geo_J * gw[:, None]).T @ geo_J + (pho_J * wh[:, None]).T @ pho_J
        b = geo_J.T @ (gw * geo_r) + pho_J.T @ (wh * pr)
        if not np.isfinite(Hm).all() or not np.isfinite(b).all():
            return fail("non-finite normal equations", iters=it,
                        psi_len=len(psi), steps=steps)
        eigval, eigvec = np.linalg.eigh(Hm)
        emax = float(eigval[-1])
        emin = float(eigval[0])
        cond = np.inf if emin <= 0 else emax / emin
        if emax <= 0 or cond > cfg.cond_max:
            bad = eigval < emax / cfg.cond_max
            dirs = eigvec[:, bad].T.copy()
            return fail("degenerate normal system", cond=cond, dirs=dirs,
                        iters=it, psi_len=len(psi), steps=steps)
        delta = np.linalg.solve(Hm, -b)
        e0 = _objective(geo_r, pho_r, psi.weight, cfg)
        alpha = 1.0
        accepted = False
        for _ in range(8):
            cand = se3_exp(alpha * delta) @ pose
            g_r, _, p_r, _ = _residuals(sverts, sint, psi, tm,
                                        cand, intr, use_photo)
            e1 = _objective(g_r, p_r, psi.weight, cfg)
            if e1 <= e0 + 1e-12:
                accepted = True
                break
            alpha *= 0.5
        iters = it + 1
        if not accepted:
            converged = True
            break
        pose = cand
        steps.append((e0, e1))
        mean_res = float(np.mean(np.abs(g_r)))
        if np.linalg.norm(alpha * delta) < cfg.update_eps:
            converged = True
            break
    return RegistrationResult(
        pose=pose, iterations=iters, mean_residual=mean_res,
        converged=converged, failure=False, failure_reason="",
        condition_number=cond, degenerate_directions=np.empty((0, 6)),
        num_correspondences=len(psi), objective_steps=steps)
