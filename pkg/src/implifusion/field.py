"""Closed-form Hermite RBF field over a set of oriented point kernels.

Each kernel j carries a center p_j, unit normal n_j and support radius r_j.
The field is the quasi-interpolant

    f(x) = -sum_j < (r_j^2 / (20 + eta r_j^2)) n_j , grad_psi(x - p_j) >

with psi the compactly supported RBF from `kernels`. The field is positive on
the side the normals point to and its zero set approximates the sampled
surface. Queries run through a uniform-grid index whose cell edge equals the
largest support radius, so a 27-cell neighborhood is a superset of every
kernel whose support can reach the query point.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

_OFF = 1 << 20
_CELL_LIMIT = _OFF - 2


@dataclass
class FieldSample:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    kernel_count: int


@dataclass
class CurvatureSample:
    k1: float
    k2: float
    mean: float
    gauss: float
    reliable: bool


class KernelSet:
    """Immutable bundle of kernels plus the uniform-grid index (built lazily)."""

    def __init__(self, centers, normals, supports, eta=1.0e6):
        centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
        normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
        supports = np.ascontiguousarray(supports, dtype=np.float64).reshape(-1)
        if not (len(centers) == len(normals) == len(supports)):
            raise ValueError("centers, normals and supports must have equal length")
        if len(supports) and not np.all(np.isfinite(centers)):
            raise ValueError("kernel centers must be finite")
        if len(supports) and (not np.all(np.isfinite(supports)) or np.any(supports <= 0)):
            raise ValueError("support radii must be positive and finite")
        norms = np.linalg.norm(normals, axis=1)
        if len(norms) and (not np.all(np.isfinite(norms)) or np.any(norms == 0)):
            raise ValueError("kernel normals must be nonzero and finite")
        if len(norms):
            normals = normals / norms[:, None]
        self.centers = centers
        self.normals = np.ascontiguousarray(normals)
        self.supports = supports
        self.eta = float(eta)
        r2 = supports * supports
        self.coeffs = r2 / (20.0 + self.eta * r2)
        self.cell_edge = float(supports.max()) if len(supports) else 1.0
        self._grid = None

    def __len__(self):
        return len(self.supports)

    def grid(self):
        if self._grid is None:
            self._grid = _build_grid(self.centers, self.cell_edge)
        return self._grid


def _build_grid(centers, edge):
    n = len(centers)
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, np.zeros(1, dtype=np.int64), empty
    cells = np.floor(centers / edge).astype(np.int64)
    if np.any(np.abs(cells) > _CELL_LIMIT):
        raise ValueError("kernel coordinates exceed the indexable range")
    keys = ((cells[:, 0] + _OFF) << 42) | ((cells[:, 1] + _OFF) << 21) | (cells[:, 2] + _OFF)
    order = np.argsort(keys, kind="stable").astype(np.int64)
    sorted_keys = keys[order]
    ukeys, first = np.unique(sorted_keys, return_index=True)
    offsets = np.concatenate([first, [n]]).astype(np.int64)
    return ukeys, offsets, order


@njit(cache=True)
def _gather_candidates(px, py, pz, edge, ukeys, offsets, order, buf):
    """Kernel ids from the 27 cells around the query point, ascending."""
    ix = np.int64(np.floor(px / edge))
    iy = np.int64(np.floor(py / edge))
    iz = np.int64(np.floor(pz / edge))
    cnt = 0
    for dx in range(-1, 2):
        for dy in range(-1, 2):
            for dz in range(-1, 2):
                key = ((ix + dx + _OFF) << 42) | ((iy + dy + _OFF) << 21) | (iz + dz + _OFF)
                pos = np.searchsorted(ukeys, key)
                if pos < ukeys.shape[0] and ukeys[pos] == key:
                    for j in range(offsets[pos], offsets[pos + 1]):
                        buf[cnt] = order[j]
                        cnt += 1
    if cnt > 1:
        buf[:cnt].sort()
    return cnt


@njit(cache=True)
def _eval_core(px, py, pz, centers, normals, coeffs, supports, cand, ncand, want_hess):
    val = 0.0
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    h00 = 0.0
    h01 = 0.0
    h02 = 0.0
    h11 = 0.0
    h12 = 0.0
    h22 = 0.0
    cnt = 0
    for ii in range(ncand):
        j = cand[ii]
        y0 = px - centers[j, 0]
        y1 = py - centers[j, 1]
        y2 = pz - centers[j, 2]
        r = supports[j]
        d2 = y0 * y0 + y1 * y1 + y2 * y2
        if d2 >= r * r:
            continue
        cnt += 1
        c = coeffs[j]
        n0 = normals[j, 0]
        n1 = normals[j, 1]
        n2 = normals[j, 2]
        rin2 = 1.0 / (r * r)
        d = np.sqrt(d2)
        s = d / r
        one = 1.0 - s
        phi = -20.0 * one * one * one * rin2  # psi'(d)/d, finite at d = 0
        u = n0 * y0 + n1 * y1 + n2 * y2
        val += -c * phi * u
        if d > 0.0:
            second = -20.0 * one * one * (1.0 - 4.0 * s) * rin2  # psi''(d)
            inv_d = 1.0 / d
            ux0 = y0 * inv_d
            ux1 = y1 * inv_d
            ux2 = y2 * inv_d
            ndot = n0 * ux0 + n1 * ux1 + n2 * ux2
            coef = (second - phi) * ndot
            g0 += -c * (phi * n0 + coef * ux0)
            g1 += -c * (phi * n1 + coef * ux1)
            g2 += -c * (phi * n2 + coef * ux2)
            if want_hess:
                phi_p = 60.0 * one * one * rin2 / r
                phi_pp = -120.0 * one * rin2 / (r * r)
                cxx = phi_pp * u - phi_p * u * inv_d
                ci = phi_p * u * inv_d
                cnx = phi_p
                h00 += -c * (cxx * ux0 * ux0 + ci + cnx * 2.0 * n0 * ux0)
                h11 += -c * (cxx * ux1 * ux1 + ci + cnx * 2.0 * n1 * ux1)
                h22 += -c * (cxx * ux2 * ux2 + ci + cnx * 2.0 * n2 * ux2)
                h01 += -c * (cxx * ux0 * ux1 + cnx * (n0 * ux1 + n1 * ux0))
                h02 += -c * (cxx * ux0 * ux2 + cnx * (n0 * ux2 + n2 * ux0))
                h12 += -c * (cxx * ux1 * ux2 + cnx * (n1 * ux2 + n2 * ux1))
        else:
            g0 += -c * phi * n0
            g1 += -c * phi * n1
            g2 += -c * phi * n2
            if want_hess:
                # along-normal limit of the third-derivative contraction
                phi_p = 60.0 * rin2 / r
                h00 += -c * phi_p * (1.0 + n0 * n0)
                h11 += -c * phi_p * (1.0 + n1 * n1)
                h22 += -c * phi_p * (1.0 + n2 * n2)
                h01 += -c * phi_p * n0 * n1
                h02 += -c * phi_p * n0 * n2
                h12 += -c * phi_p * n1 * n2
    return val, g0, g1, g2, h00, h01, h02, h11, h12, h22, cnt


@njit(cache=True)
def _sample_many_core(points, edge, ukeys, offsets, order,
                      centers, normals, coeffs, supports, want_hess):
    n = points.shape[0]
    values = np.empty(n)
    grads = np.empty((n, 3))
    hessians = np.empty((n, 3, 3))
    counts = np.empty(n, dtype=np.int64)
    buf = np.empty(order.shape[0], dtype=np.int64)
    for i in range(n):
        cnt = _gather_candidates(points[i, 0], points[i, 1], points[i, 2],
                                 edge, ukeys, offsets, order, buf)
        v, g0, g1, g2, h00, h01, h02, h11, h12, h22, used = _eval_core(
            points[i, 0], points[i, 1], points[i, 2],
            centers, normals, coeffs, supports, buf, cnt, want_hess)
        values[i] = v
        grads[i, 0] = g0
        grads[i, 1] = g1
        grads[i, 2] = g2
        hessians[i, 0, 0] = h00
        hessians[i, 0, 1] = h01
        hessians[i, 0, 2] = h02
        hessians[i, 1, 0] = h01
        hessians[i, 1, 1] = h11
        hessians[i, 1, 2] = h12
        hessians[i, 2, 0] = h02
        hessians[i, 2, 1] = h12
        hessians[i, 2, 2] = h22
        counts[i] = used
    return values, grads, hessians, counts


def _sample_point(x, ks, want_hess, brute_force=False):
    x = np.asarray(x, dtype=np.float64).reshape(3)
    if len(ks) == 0:
        return None
    if brute_force:
        cand = np.arange(len(ks), dtype=np.int64)
        cnt = len(cand)
    else:
        ukeys, offsets, order = ks.grid()
        cand = np.empty(len(ks), dtype=np.int64)
        cnt = _gather_candidates(x[0], x[1], x[2], ks.cell_edge,
                                 ukeys, offsets, order, cand)
    v, g0, g1, g2, h00, h01, h02, h11, h12, h22, used = _eval_core(
        x[0], x[1], x[2], ks.centers, ks.normals, ks.coeffs, ks.supports,
        cand, cnt, want_hess)
    if used == 0:
        return None
    grad = np.array([g0, g1, g2])
    hess = np.array([[h00, h01, h02], [h01, h11, h12], [h02, h12, h22]])
    return FieldSample(value=v, gradient=grad, hessian=hess, kernel_count=int(used))


def sample(x, ks, brute_force=False):
    """Field value, gradient, Hessian at x; None when x is outside all supports."""
    return _sample_point(x, ks, want_hess=True, brute_force=brute_force)


def hrbf_value(x, ks, brute_force=False):
    s = _sample_point(x, ks, want_hess=False, brute_force=brute_force)
    return float("nan") if s is None else s.value


def hrbf_gradient(x, ks, brute_force=False):
    s = _sample_point(x, ks, want_hess=False, brute_force=brute_force)
    return np.full(3, np.nan) if s is None else s.gradient


def hrbf_hessian(x, ks, brute_force=False):
    s = _sample_point(x, ks, want_hess=True, brute_force=brute_force)
    return np.full((3, 3), np.nan) if s is None else s.hessian


def sample_many(points, ks, want_hess=True):
    """Batched field query. Returns (values, gradients, hessians, kernel_counts)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(ks) == 0:
        n = len(points)
        return (np.full(n, np.nan), np.full((n, 3), np.nan),
                np.full((n, 3, 3), np.nan), np.zeros(n, dtype=np.int64))
    ukeys, offsets, order = ks.grid()
    values, grads, hessians, counts = _sample_many_core(
        points, ks.cell_edge, ukeys, offsets, order,
        ks.centers, ks.normals, ks.coeffs, ks.supports, want_hess)
    empty = counts == 0
    values[empty] = np.nan
    grads[empty] = np.nan
    hessians[empty] = np.nan
    return values, grads, hessians, counts


@njit(cache=True)
def _principal_curvatures(g0, g1, g2, h00, h01, h02, h11, h12, h22,
                          grad_floor, clamp):
    """Level-set principal curvatures from gradient and Hessian components.

    Returns (k1, k2, mean, gauss, reliable) with k1 >= k2; NaNs and
    reliable=False when the gradient magnitude is below the floor, clamped
    values and reliable=False when a curvature leaves [-clamp, clamp].
    """
    gnorm2 = g0 * g0 + g1 * g1 + g2 * g2
    gnorm = np.sqrt(gnorm2)
    if not np.isfinite(gnorm) or gnorm < grad_floor:
        return np.nan, np.nan, np.nan, np.nan, False
    ghg = (g0 * (h00 * g0 + h01 * g1 + h02 * g2)
           + g1 * (h01 * g0 + h11 * g1 + h12 * g2)
           + g2 * (h02 * g0 + h12 * g1 + h22 * g2))
    trace = h00 + h11 + h22
    mean = (ghg - gnorm2 * trace) / (2.0 * gnorm2 * gnorm)
    a00 = h11 * h22 - h12 * h12
    a11 = h00 * h22 - h02 * h02
    a22 = h00 * h11 - h01 * h01
    a01 = h02 * h12 - h01 * h22
    a02 = h01 * h12 - h02 * h11
    a12 = h02 * h01 - h00 * h12
    gag = (g0 * g0 * a00 + g1 * g1 * a11 + g2 * g2 * a22
           + 2.0 * (g0 * g1 * a01 + g0 * g2 * a02 + g1 * g2 * a12))
    gauss = gag / (gnorm2 * gnorm2)
    disc = mean * mean - gauss
    if disc < 0.0:
        disc = 0.0
    root = np.sqrt(disc)
    k1 = mean + root
    k2 = mean - root
    reliable = True
    if k1 > clamp:
        k1 = clamp
        reliable = False
    elif k1 < -clamp:
        k1 = -clamp
        reliable = False
    if k2 > clamp:
        k2 = clamp
        reliable = False
    elif k2 < -clamp:
        k2 = -clamp
        reliable = False
    return k1, k2, mean, gauss, reliable


def curvatures(field_sample, grad_floor=1e-8, clamp=300.0):
    """Principal, mean and Gaussian curvature of the level set through a sample."""
    g = field_sample.gradient
    h = field_sample.hessian
    k1, k2, mean, gauss, ok = _principal_curvatures(
        g[0], g[1], g[2],
        h[0, 0], h[0, 1], h[0, 2], h[1, 1], h[1, 2], h[2, 2],
        grad_floor, clamp)
    return CurvatureSample(k1=k1, k2=k2, mean=mean, gauss=gauss, reliable=bool(ok))
