"""Compactly supported radial basis function and its spatial derivatives.

The profile is psi(d) = (1 - d/r)^4 (4 d/r + 1) on [0, r] and zero outside,
which is C^2 across the support boundary. Gradient and Hessian are taken with
respect to the 3D offset x, d = |x|.
"""

import numpy as np


def _check_radius(r):
    if not np.all(np.asarray(r) > 0):
        raise ValueError("support radius must be positive")


def csrbf_value(d, r):
    """psi(d, r); accepts scalars or arrays, d >= 0."""
    _check_radius(r)
    d = np.asarray(d, dtype=np.float64)
    s = np.minimum(d / r, 1.0)
    out = (1.0 - s) ** 4 * (4.0 * s + 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def csrbf_gradient(offset, r):
    """Gradient of psi(|x|, r) with respect to x, evaluated at x = offset."""
    _check_radius(r)
    x = np.asarray(offset, dtype=np.float64)
    d = np.linalg.norm(x)
    if d >= r:
        return np.zeros(3)
    s = d / r
    # psi'(d)/d stays finite at d = 0, so the formula needs no special case
    phi = -20.0 * (1.0 - s) ** 3 / (r * r)
    return phi * x


def csrbf_hessian(offset, r):
    """Hessian of psi(|x|, r) with respect to x, evaluated at x = offset.

    At the center the radial limit -20/r^2 * I is used.
    """
    _check_radius(r)
    x = np.asarray(offset, dtype=np.float64)
    d = np.linalg.norm(x)
    if d >= r:
        return np.zeros((3, 3))
    if d == 0.0:
        return -20.0 / (r * r) * np.eye(3)
    s = d / r
    phi = -20.0 * (1.0 - s) ** 3 / (r * r)          # psi'(d)/d
    second = -20.0 * (1.0 - s) ** 2 * (1.0 - 4.0 * s) / (r * r)  # psi''(d)
    u = x / d
    outer = np.outer(u, u)
    return second * outer + phi * (np.eye(3) - outer)
