import numpy as np
import pytest

from implifusion.kernels import csrbf_gradient, csrbf_hessian, csrbf_value


def test_spot_values():
    assert csrbf_value(0.0, 1.0) == 1.0
    assert csrbf_value(1.0, 1.0) == 0.0
    assert csrbf_value(0.5, 1.0) == pytest.approx(0.1875, abs=1e-15)
    # scale invariance in d/r
    assert csrbf_value(0.5 * 0.07, 0.07) == pytest.approx(0.1875, abs=1e-15)


def test_zero_outside_support():
    assert csrbf_value(1.2, 1.0) == 0.0
    assert np.allclose(csrbf_gradient(np.array([0.0, 1.5, 0.0]), 1.0), 0.0)
    assert np.allclose(csrbf_hessian(np.array([2.0, 0.0, 0.0]), 1.0), 0.0)


def test_vectorized_values():
    d = np.linspace(0.0, 2.0, 11)
    v = csrbf_value(d, 1.0)
    assert v.shape == d.shape
    assert v[0] == 1.0
    assert np.all(v[d >= 1.0] == 0.0)
    assert np.all(np.diff(v) <= 1e-15)   # monotone decreasing profile


def test_invalid_radius():
    with pytest.raises(ValueError):
        csrbf_value(0.1, 0.0)
    with pytest.raises(ValueError):
        csrbf_gradient(np.zeros(3), -1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        r = rng.uniform(0.05, 2.0)
        d = rng.uniform(0.0, 0.95) * r
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        x = d * u
        g = csrbf_gradient(x, r)
        fd = np.zeros(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h * r
            fd[i] = (csrbf_value(np.linalg.norm(x + e), r)
                     - csrbf_value(np.linalg.norm(x - e), r)) / (2 * h * r)
        scale = max(np.linalg.norm(g), 1.0 / r)
        worst = max(worst, np.linalg.norm(fd - g) / scale)
    assert worst <= 1e-4


def test_hessian_matches_finite_differences():
    rng = np.random.default_rng(4)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        r = rng.uniform(0.05, 2.0)
        d = rng.uniform(0.0, 0.95) * r
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        x = d * u
        hess = csrbf_hessian(x, r)
        fd = np.zeros((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h * r
            fd[:, i] = (csrbf_gradient(x + e, r)
                        - csrbf_gradient(x - e, r)) / (2 * h * r)
        scale = max(np.abs(hess).max(), 1.0 / (r * r))
        worst = max(worst, np.abs(fd - hess).max() / scale)
    assert worst <= 1e-4


def test_hessian_symmetric_and_center_limit():
    h = csrbf_hessian(np.array([0.01, -0.02, 0.005]), 0.1)
    assert np.allclose(h, h.T, atol=1e-15)
    c = csrbf_hessian(np.zeros(3), 0.5)
    assert np.allclose(c, -20.0 / 0.25 * np.eye(3), atol=1e-12)
