"""HTTP service: session lifecycle, validation, and export endpoints."""

import numpy as np
import pytest

from implifusion.client import EngineClient
from implifusion.datasets import _PLY_DTYPE
from implifusion.synthetic import make_scene, render_synthetic, synthetic_intrinsics


@pytest.fixture(scope="module")
def scene_frames():
    intr = synthetic_intrinsics(80, 60)
    scene = make_scene("room", n_frames=4)
    frames = [(ts, *render_synthetic(scene, pose, intr))
              for ts, pose in scene.poses]
    return {"intr": intr, "scene": scene, "frames": frames}


@pytest.fixture()
def client():
    with EngineClient() as c:
        yield c


def test_session_lifecycle(client, scene_frames):
    intr = scene_frames["intr"]
    sid = client.create_session(intr, config={"width": 80, "height": 60})
    assert isinstance(sid, str) and sid
    for ts, depth, color in scene_frames["frames"]:
        res = client.push_frame(ts, depth, color)
        assert res["tracked"] is True
        assert len(res["pose"]) == 16
    info = client.info()
    assert info["frames_processed"] == 4
    assert info["frames_lost"] == 0
    assert info["model_size"] > 1000
    client.close_session()
    assert client.session_id is None


def test_first_frame_pose_is_identity(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    ts, depth, color = scene_frames["frames"][0]
    res = client.push_frame(ts, depth, color)
    pose = np.array(res["pose"]).reshape(4, 4)
    assert np.allclose(pose, np.eye(4), atol=1e-12)
    assert res["index"] == 0 and res["timestamp"] == ts


def test_unknown_session_404(client, scene_frames):
    client.create_session(scene_frames["intr"])
    client.session_id = "deadbeef"
    with pytest.raises(RuntimeError, match="404"):
        client.info()
    client.session_id = None


def test_bad_depth_buffer_422(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    short = np.zeros((30, 40))
    with pytest.raises(RuntimeError, match="422"):
        client.push_frame(0.0, short)


def test_bad_color_buffer_422(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    ts, depth, _ = scene_frames["frames"][0]
    with pytest.raises(RuntimeError, match="422"):
        client.push_frame(ts, depth, color=np.zeros((2, 2, 3), np.uint8))


def test_unknown_config_key_422(client, scene_frames):
    with pytest.raises(RuntimeError, match="unknown config key"):
        client.create_session(scene_frames["intr"], config={"warp": 9})


def test_bad_fixed_pose_422(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    ts, depth, color = scene_frames["frames"][0]
    with pytest.raises(RuntimeError, match="422"):
        client.push_frame(ts, depth, color, fixed_pose=[0.0] * 12)


def test_fixed_pose_is_adopted(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    pose = np.eye(4)
    pose[0, 3] = 0.25
    ts, depth, color = scene_frames["frames"][0]
    res = client.push_frame(ts, depth, color, fixed_pose=pose)
    assert np.allclose(np.array(res["pose"]).reshape(4, 4), pose)


def test_trajectory_text_format(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    for ts, depth, color in scene_frames["frames"][:3]:
        client.push_frame(ts, depth, color)
    text = client.trajectory_text()
    lines = text.strip().splitlines()
    assert len(lines) == 3
    first = lines[0].split()
    assert len(first) == 8
    assert first[0] == "0.000000"
    assert [float(x) for x in first[1:]] == pytest.approx(
        [0, 0, 0, 0, 0, 0, 1], abs=1e-9)


def test_pointcloud_endpoint_is_valid_ply(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    ts, depth, color = scene_frames["frames"][0]
    res = client.push_frame(ts, depth, color)
    blob = client.pointcloud_bytes()
    header, body = blob.split(b"end_header\n", 1)
    assert header.startswith(b"ply\nformat binary_little_endian 1.0")
    n = int([l for l in header.decode().splitlines()
             if l.startswith("element vertex")][0].split()[-1])
    assert n == res["model_size"]
    assert len(body) == n * _PLY_DTYPE.itemsize


def test_closed_session_rejects_frames(client, scene_frames):
    intr = scene_frames["intr"]
    client.create_session(intr, config={"width": 80, "height": 60})
    sid = client.session_id
    client.close_session()
    client.session_id = sid
    ts, depth, color = scene_frames["frames"][0]
    with pytest.raises(RuntimeError, match="404"):
        client.push_frame(ts, depth, color)
    client.session_id = None


def test_sessions_are_isolated(client, scene_frames):
    intr = scene_frames["intr"]
    a = client.create_session(intr, config={"width": 80, "height": 60})
    ts, depth, color = scene_frames["frames"][0]
    client.push_frame(ts, depth, color)
    b_client = EngineClient(app=client._client.app)
    b = b_client.create_session(intr, config={"width": 80, "height": 60})
    assert a != b
    assert b_client.info()["frames_processed"] == 0
    assert client.info()["frames_processed"] == 1
