"""Synthetic scenes: analytic renders, distance oracles, camera paths."""

import numpy as np
import pytest

from implifusion.synthetic import (Box, Plane, Sphere, make_scene,
                                   render_synthetic, synthetic_intrinsics)


def test_intrinsics_scaling():
    intr = synthetic_intrinsics(320, 240)
    assert intr.fx == 256.0 and intr.fy == 256.0
    assert intr.cx == 159.5 and intr.cy == 119.5
    assert intr.depth_scale == 5000.0
    half = synthetic_intrinsics(160, 120)
    assert half.fx == intr.fx / 2


def test_unknown_scene_rejected():
    with pytest.raises(ValueError):
        make_scene("corridor")


def test_first_pose_is_identity():
    for name in ("room", "plane", "sphere"):
        scene = make_scene(name, n_frames=8)
        assert len(scene.poses) == 8
        ts0, pose0 = scene.poses[0]
        assert ts0 == 0.0
        assert np.allclose(pose0, np.eye(4), atol=1e-12)


def test_plane_distance_oracle():
    plane = Plane(point=np.array([0.0, 0.0, 2.0]),
                  normal=np.array([0.0, 0.0, -1.0]))
    pts = np.array([[0.3, -0.1, 2.0], [0.0, 0.0, 2.25], [5.0, 5.0, 1.0]])
    assert np.allclose(plane.distance(pts), [0.0, 0.25, 1.0])


def test_sphere_distance_oracle():
    sph = Sphere(center=np.array([0.0, 0.0, 1.5]), radius=0.5)
    pts = np.array([[0.5, 0.0, 1.5], [0.0, 0.0, 0.0], [0.0, 0.75, 1.5]])
    assert np.allclose(sph.distance(pts), [0.0, 1.0, 0.25])


def test_box_distance_oracle():
    box = Box(center=np.zeros(3), half=np.array([1.0, 1.0, 1.0]))
    pts = np.array([[1.0, 0.0, 0.0],    # on a face
                    [2.0, 0.0, 0.0],    # outside, off a face
                    [2.0, 2.0, 0.0],    # outside, off an edge
                    [0.0, 0.0, 0.5]])   # inside
    expected = [0.0, 1.0, np.sqrt(2.0), 0.5]
    assert np.allclose(box.distance(pts), expected)


def test_hollow_box_distance_is_to_walls():
    room = Box(center=np.zeros(3), half=np.array([2.0, 2.0, 2.0]),
               hollow=True)
    pts = np.array([[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [2.0, 0.3, 0.0]])
    assert np.allclose(room.distance(pts), [2.0, 0.5, 0.0])


def test_scene_distance_takes_nearest_primitive():
    scene = make_scene("sphere", n_frames=2)
    p_on_sphere = np.array([[0.0, 0.0, 1.0]])
    p_on_backdrop = np.array([[0.4, 0.2, 3.0]])
    assert scene.distance(p_on_sphere)[0] == pytest.approx(0.0, abs=1e-12)
    assert scene.distance(p_on_backdrop)[0] == pytest.approx(0.0, abs=1e-12)


def test_render_depth_matches_oracle():
    intr = synthetic_intrinsics(64, 48)
    scene = make_scene("plane", n_frames=2)
    depth, color = render_synthetic(scene, np.eye(4), intr)
    assert depth.shape == (48, 64)
    assert color.dtype == np.uint8
    # back-projected hits lie on the plane
    us, vs = np.meshgrid(np.arange(64.0), np.arange(48.0))
    pts = np.stack([(us - intr.cx) / intr.fx * depth,
                    (vs - intr.cy) / intr.fy * depth, depth], axis=-1)
    d = scene.distance(pts.reshape(-1, 3))
    assert np.max(d) < 1e-9


def test_render_hollow_room_hits_walls_not_camera():
    intr = synthetic_intrinsics(64, 48)
    scene = make_scene("room", n_frames=2)
    depth, _ = render_synthetic(scene, np.eye(4), intr)
    assert np.all(depth > 0.3)
    assert np.all(np.isfinite(depth))


def test_render_noise_statistics():
    intr = synthetic_intrinsics(160, 120)
    scene = make_scene("plane", n_frames=2)
    clean, _ = render_synthetic(scene, np.eye(4), intr)
    rng = np.random.default_rng(11)
    noisy, _ = render_synthetic(scene, np.eye(4), intr, sigma=6.0, rng=rng)
    resid = (noisy - clean)[clean > 0]
    expected_std = 6.0 / intr.depth_scale
    assert abs(resid.mean()) < expected_std / 10
    assert abs(resid.std() - expected_std) < expected_std * 0.05


def test_render_noise_is_seeded():
    intr = synthetic_intrinsics(64, 48)
    scene = make_scene("plane", n_frames=2)
    a, _ = render_synthetic(scene, np.eye(4), intr, sigma=3.0,
                            rng=np.random.default_rng([7, 3000]))
    b, _ = render_synthetic(scene, np.eye(4), intr, sigma=3.0,
                            rng=np.random.default_rng([7, 3000]))
    assert np.array_equal(a, b)


def test_texture_varies_over_surface():
    intr = synthetic_intrinsics(64, 48)
    scene = make_scene("plane", n_frames=2)
    _, color = render_synthetic(scene, np.eye(4), intr)
    lum = color.astype(np.float64).mean(axis=-1)
    assert lum.std() > 5.0   # textured, not flat


def test_orbit_poses_stay_near_start():
    scene = make_scene("room", n_frames=40)
    for _, pose in scene.poses:
        assert np.linalg.norm(pose[:3, 3]) < 0.3
        assert abs(np.trace(pose[:3, :3]) - 3.0) < 0.1


def test_render_from_moved_pose_changes_depth():
    intr = synthetic_intrinsics(64, 48)
    scene = make_scene("room", n_frames=12)
    d0, _ = render_synthetic(scene, scene.poses[0][1], intr)
    d6, _ = render_synthetic(scene, scene.poses[6][1], intr)
    assert not np.allclose(d0, d6)
