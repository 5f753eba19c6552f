import numpy as np
import pytest

from implifusion.camera import Intrinsics
from implifusion.frames import (bilateral_filter, confidence_map, luminance,
                                normals_from_vertices, preprocess_frame,
                                radial_weight, radial_weight_map,
                                support_radii)

INTR = Intrinsics(fx=128.0, fy=128.0, cx=79.5, cy=59.5, width=160, height=120)


def _plane_depth(z=2.0):
    return np.full((120, 160), z)


def test_bilateral_smooths_noise_keeps_edges():
    rng = np.random.default_rng(31)
    depth = _plane_depth()
    depth[:, 80:] = 3.0                      # depth edge
    noisy = depth + rng.normal(0, 0.002, size=depth.shape)
    out = bilateral_filter(noisy)
    # noise reduced on the flat part
    assert out[30:90, 10:60].std() < noisy[30:90, 10:60].std() * 0.6
    # edge not smeared: values stay near one side or the other
    edge = out[:, 78:82]
    assert np.all((np.abs(edge - 2.0) < 0.05) | (np.abs(edge - 3.0) < 0.05))


def test_bilateral_preserves_nan():
    depth = _plane_depth()
    depth[10:20, 10:20] = np.nan
    out = bilateral_filter(depth)
    assert np.all(np.isnan(out[12:18, 12:18]))
    assert np.isfinite(out[60, 100])


def test_normals_face_camera():
    from implifusion.camera import back_project
    verts = back_project(_plane_depth(), INTR)
    normals = normals_from_vertices(verts)
    inner = normals[2:-2, 2:-2]
    assert np.all(np.isfinite(inner))
    # pointing toward the camera: negative z, unit length
    assert np.all(inner[..., 2] < 0)
    assert np.allclose(np.linalg.norm(inner, axis=-1), 1.0, atol=1e-9)
    assert np.allclose(inner[..., 2], -1.0, atol=1e-6)


def test_support_radii_cover_neighbors():
    from implifusion.camera import back_project
    verts = back_project(_plane_depth(), INTR)
    sup = support_radii(verts, k=8, window=7)
    inner = sup[5:-5, 5:-5]
    # on a regular grid the 8th neighbor sits within 2 pixel spacings
    spacing = 2.0 / 128.0
    assert np.all(inner >= spacing * 0.9)
    assert np.all(inner <= spacing * 3.0)


def test_support_radii_clamped():
    verts = np.full((20, 20, 3), np.nan)
    verts[10, 10] = [0.0, 0.0, 2.0]
    verts[10, 11] = [5.0, 0.0, 2.0]   # absurdly distant neighbor
    sup = support_radii(verts, k=1, window=3, r_min=0.002, r_max=0.5)
    assert sup[10, 10] <= 0.5


def test_radial_weight_center_and_corner():
    w, h = 640, 480
    intr = Intrinsics(fx=525.0, fy=525.0, cx=(w - 1) / 2, cy=(h - 1) / 2,
                      width=w, height=h)
    assert radial_weight(intr.cx, intr.cy, intr) == 1.0
    corner = radial_weight(0.0, 0.0, intr)
    assert corner == pytest.approx(np.exp(-0.25 / 0.72), abs=1e-12)
    m = radial_weight_map(intr)
    assert m.shape == (h, w)
    assert m.max() <= 1.0
    assert m[0, 0] == corner


def test_confidence_in_unit_interval():
    frame = preprocess_frame(_plane_depth(), None, INTR)
    grads = np.tile([0.0, 0.0, 0.05], (120, 160, 1))
    conf = confidence_map(frame, grads, epsilon=0.02)
    valid = np.isfinite(conf)
    assert valid.any()
    assert np.all(conf[valid] > 0.0)
    assert np.all(conf[valid] <= 1.0)


def test_confidence_increases_with_gradient_agreement():
    frame = preprocess_frame(_plane_depth(), None, INTR)
    strong = np.tile([0.0, 0.0, 0.06], (120, 160, 1))
    weak = np.tile([0.0, 0.0, 0.01], (120, 160, 1))
    c_strong = confidence_map(frame, strong, epsilon=0.02)
    c_weak = confidence_map(frame, weak, epsilon=0.02)
    sel = np.isfinite(c_strong) & np.isfinite(c_weak)
    assert np.all(c_strong[sel] >= c_weak[sel])


def test_luminance_range():
    color = np.zeros((4, 4, 3), dtype=np.uint8)
    color[0, 0] = [255, 255, 255]
    lum = luminance(color)
    assert lum[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert lum[1, 1] == 0.0


def test_preprocess_clamps_depth_range():
    depth = _plane_depth()
    depth[0, 0] = 0.05    # too close
    depth[0, 1] = 50.0    # too far
    frame = preprocess_frame(depth, None, INTR)
    assert np.isnan(frame.depth[0, 0])
    assert np.isnan(frame.depth[0, 1])
    assert np.isfinite(frame.depth[60, 80])
    assert frame.intensity is None
    assert frame.vertices.shape == (120, 160, 3)
