"""Surfel fusion: merge algebra, gating, insertion, and culling."""

import numpy as np
import pytest

from implifusion.frames import InputFrame
from implifusion.fusion import FusionConfig, GlobalModel, cull, integrate
from implifusion.synthetic import synthetic_intrinsics


def _frame(intr, verts, normals, conf, sups, colors=None):
    return InputFrame(timestamp=0.0, intrinsics=intr,
                      depth=verts[..., 2].copy(), color=colors,
                      intensity=None, vertices=verts, normals=normals,
                      depth_normals=normals, supports=sups, confidence=conf)


def _plane_frame(intr, z=2.0, conf_value=1.0):
    """Fronto-parallel plane covering the image; exact analytic vertices."""
    w, h = intr.width, intr.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    verts = np.stack([(us - intr.cx) / intr.fx * z,
                      (vs - intr.cy) / intr.fy * z,
                      np.full((h, w), z)], axis=-1)
    normals = np.zeros((h, w, 3))
    normals[..., 2] = -1.0
    conf = np.full((h, w), conf_value)
    sups = np.full((h, w), 0.05)
    colors = np.full((h, w, 3), 0.5)
    return _frame(intr, verts, normals, conf, sups, colors)


def _single_pixel_frame(intr, pixel, vertex, normal, conf_value, support,
                        color):
    """Frame where exactly one pixel is valid."""
    w, h = intr.width, intr.height
    verts = np.full((h, w, 3), np.nan)
    normals = np.full((h, w, 3), np.nan)
    conf = np.full((h, w), np.nan)
    sups = np.full((h, w), np.nan)
    colors = np.zeros((h, w, 3))
    u, v = pixel
    verts[v, u] = vertex
    normals[v, u] = normal
    conf[v, u] = conf_value
    sups[v, u] = support
    colors[v, u] = color
    return _frame(intr, verts, normals, conf, sups, colors)


def _pixel_vertex(intr, u, v, z):
    return np.array([(u - intr.cx) / intr.fx * z,
                     (v - intr.cy) / intr.fy * z, z])


@pytest.fixture
def intr():
    return synthetic_intrinsics(32, 24)


def test_insert_all_on_empty_model(intr):
    frame = _plane_frame(intr)
    model = integrate(GlobalModel(), frame, np.eye(4), frame_idx=3)
    assert len(model) == intr.width * intr.height
    assert np.allclose(model.positions,
                       frame.vertices.reshape(-1, 3), atol=0)
    assert np.all(model.created == 3)
    assert np.all(model.updated == 3)
    assert np.allclose(model.confidence, 1.0)


def test_append_stores_fields(intr):
    model = GlobalModel()
    model.append(np.array([[0.0, 1.0, 2.0]]), np.array([[0.0, 0.0, -1.0]]),
                 np.array([[0.1, 0.2, 0.3]]), np.array([0.04]),
                 np.array([2.5]), frame_idx=7)
    assert len(model) == 1
    assert model.positions[0, 1] == 1.0
    assert model.confidence[0] == 2.5
    assert model.created[0] == 7 and model.updated[0] == 7


def test_merge_confidence_weighted_average(intr):
    u, v = 10, 7
    base = _pixel_vertex(intr, u, v, 2.0)
    n = np.array([0.0, 0.0, -1.0])
    model = GlobalModel()
    model.append(base[None], n[None], np.array([[0.2, 0.4, 0.6]]),
                 np.array([0.05]), np.array([2.0]), frame_idx=0)

    vertex = base + np.array([0.0, 0.0, 0.003])
    frame = _single_pixel_frame(intr, (u, v), vertex, n, 1.0, 0.04,
                                np.array([0.8, 0.6, 0.4]))
    integrate(model, frame, np.eye(4), frame_idx=5)

    assert len(model) == 1
    assert abs(model.confidence[0] - 3.0) <= 1e-12
    expected_pos = (2.0 * base + 1.0 * vertex) / 3.0
    assert np.max(np.abs(model.positions[0] - expected_pos)) <= 1e-12
    expected_col = (2.0 * np.array([0.2, 0.4, 0.6])
                    + 1.0 * np.array([0.8, 0.6, 0.4])) / 3.0
    assert np.max(np.abs(model.colors[0] - expected_col)) <= 1e-12
    assert model.supports[0] == 0.04
    assert model.updated[0] == 5 and model.created[0] == 0


def test_merge_equal_confidence_is_midpoint(intr):
    u, v = 16, 12
    base = _pixel_vertex(intr, u, v, 2.0)
    n = np.array([0.0, 0.0, -1.0])
    model = GlobalModel()
    model.append(base[None], n[None], np.full((1, 3), 0.5),
                 np.array([0.05]), np.array([1.0]))
    vertex = base + np.array([0.002, -0.001, 0.003])
    frame = _single_pixel_frame(intr, (u, v), vertex, n, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, np.eye(4), frame_idx=1)
    assert len(model) == 1
    assert np.max(np.abs(model.positions[0] - (base + vertex) / 2.0)) <= 1e-12
    assert abs(model.confidence[0] - 2.0) <= 1e-12


def test_merge_normal_average_renormalized(intr):
    u, v = 16, 12
    base = _pixel_vertex(intr, u, v, 2.0)
    n0 = np.array([0.0, 0.0, -1.0])
    tilt = np.deg2rad(10.0)
    n1 = np.array([np.sin(tilt), 0.0, -np.cos(tilt)])
    model = GlobalModel()
    model.append(base[None], n0[None], np.full((1, 3), 0.5),
                 np.array([0.05]), np.array([1.0]))
    frame = _single_pixel_frame(intr, (u, v), base, n1, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, np.eye(4), frame_idx=1)
    expected = (n0 + n1) / 2.0
    expected /= np.linalg.norm(expected)
    assert len(model) == 1
    assert np.max(np.abs(model.normals[0] - expected)) <= 1e-12
    assert abs(np.linalg.norm(model.normals[0]) - 1.0) <= 1e-12


def test_merge_distance_gate_scales_with_depth(intr):
    u, v = 10, 7
    base = _pixel_vertex(intr, u, v, 2.0)
    n = np.array([0.0, 0.0, -1.0])
    model = GlobalModel()
    model.append(base[None], n[None], np.full((1, 3), 0.5),
                 np.array([0.05]), np.array([1.0]))
    # gate is delta_merge * depth = 0.01 * 2 = 2 cm; offset beyond it
    vertex = base + np.array([0.0, 0.0, 0.025])
    frame = _single_pixel_frame(intr, (u, v), vertex, n, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, np.eye(4), frame_idx=1)
    assert len(model) == 2
    assert model.confidence[0] == 1.0


def test_merge_angle_gate(intr):
    u, v = 10, 7
    base = _pixel_vertex(intr, u, v, 2.0)
    model = GlobalModel()
    model.append(base[None], np.array([[0.0, 0.0, -1.0]]),
                 np.full((1, 3), 0.5), np.array([0.05]), np.array([1.0]))
    tilt = np.deg2rad(25.0)   # beyond the 20 degree gate
    n1 = np.array([np.sin(tilt), 0.0, -np.cos(tilt)])
    frame = _single_pixel_frame(intr, (u, v), base, n1, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, np.eye(4), frame_idx=1)
    assert len(model) == 2


def test_merge_picks_nearest_candidate(intr):
    u, v = 10, 7
    base = _pixel_vertex(intr, u, v, 2.0)
    n = np.array([0.0, 0.0, -1.0])
    far = base + np.array([0.0, 0.0, 0.008])
    near = base + np.array([0.0, 0.0, 0.002])
    model = GlobalModel()
    model.append(np.stack([far, near]), np.stack([n, n]),
                 np.full((2, 3), 0.5), np.array([0.05, 0.05]),
                 np.array([1.0, 1.0]))
    frame = _single_pixel_frame(intr, (u, v), base, n, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, np.eye(4), frame_idx=1)
    assert len(model) == 2
    assert model.confidence[1] == 2.0   # near surfel absorbed the pixel
    assert model.confidence[0] == 1.0


def test_invalid_pixels_not_inserted(intr):
    frame = _plane_frame(intr)
    frame.confidence[5, :] = np.nan
    frame.confidence[6, :] = 0.0
    frame.vertices[7, :, 2] = np.nan
    model = integrate(GlobalModel(), frame, np.eye(4), frame_idx=0)
    assert len(model) == (intr.height - 3) * intr.width


def test_cull_keeps_stable_surfels_forever():
    model = GlobalModel()
    model.append(np.zeros((1, 3)), np.array([[0.0, 0.0, -1.0]]),
                 np.full((1, 3), 0.5), np.array([0.05]), np.array([10.0]),
                 frame_idx=0)
    cull(model, frame_idx=10_000)
    assert len(model) == 1


def test_cull_removes_weak_surfels_after_probation():
    model = GlobalModel()
    model.append(np.zeros((2, 3)), np.tile([0.0, 0.0, -1.0], (2, 1)),
                 np.full((2, 3), 0.5), np.array([0.05, 0.05]),
                 np.array([0.4, 9.999]), frame_idx=0)
    cull(model, frame_idx=20)   # age == t_unstable: still in probation
    assert len(model) == 2
    cull(model, frame_idx=21)   # past the window, both below c_stable
    assert len(model) == 0


def test_cull_is_age_based_not_order_based():
    model = GlobalModel()
    model.append(np.zeros((1, 3)), np.array([[0.0, 0.0, -1.0]]),
                 np.full((1, 3), 0.5), np.array([0.05]), np.array([0.1]),
                 frame_idx=0)
    model.append(np.ones((1, 3)), np.array([[0.0, 0.0, -1.0]]),
                 np.full((1, 3), 0.5), np.array([0.05]), np.array([0.1]),
                 frame_idx=15)
    cull(model, frame_idx=25)
    assert len(model) == 1
    assert np.allclose(model.positions[0], 1.0)


def test_integrate_under_pose_transform(intr):
    """A frame observed from a shifted camera merges with surfels whose
    world positions match, exercising the world-frame association."""
    pose = np.eye(4)
    pose[:3, 3] = [0.05, -0.02, 0.1]
    u, v = 16, 12
    cam_vertex = _pixel_vertex(intr, u, v, 2.0)
    world_vertex = cam_vertex + pose[:3, 3]
    n = np.array([0.0, 0.0, -1.0])
    model = GlobalModel()
    model.append(world_vertex[None], n[None], np.full((1, 3), 0.5),
                 np.array([0.05]), np.array([1.0]))
    frame = _single_pixel_frame(intr, (u, v), cam_vertex, n, 1.0, 0.05,
                                np.full(3, 0.5))
    integrate(model, frame, pose, frame_idx=1)
    assert len(model) == 1
    assert abs(model.confidence[0] - 2.0) <= 1e-12
    assert np.max(np.abs(model.positions[0] - world_vertex)) <= 1e-12
