"""HTTP client for the tracking service.

By default it talks to an in-process app over httpx's ASGI transport, so the
CLI exercises the exact service path without a socket. Pass base_url to use
a remote server instead.
"""

import base64

import httpx
import numpy as np


class EngineClient:
    def __init__(self, base_url=None, app=None, timeout=600.0):
        if base_url:
            self._client = httpx.Client(base_url=base_url, timeout=timeout)
        else:
            # sync httpx client over the ASGI app, no socket involved
            import warnings
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                from fastapi.testclient import TestClient
            if app is None:
                from .service import create_app
                app = create_app()
            self._client = TestClient(app)
        self.session_id = None

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _check(self, resp):
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise RuntimeError(f"service error {resp.status_code}: {detail}")
        return resp

    def create_session(self, intrinsics, config=None):
        body = {"intrinsics": {
                    "fx": intrinsics.fx, "fy": intrinsics.fy,
                    "cx": intrinsics.cx, "cy": intrinsics.cy,
                    "width": intrinsics.width, "height": intrinsics.height,
                    "depth_scale": intrinsics.depth_scale},
                "config": config or {}}
        resp = self._check(self._client.post("/sessions", json=body))
        self.session_id = resp.json()["session_id"]
        return self.session_id

    def push_frame(self, timestamp, depth, color=None, fixed_pose=None):
        depth = np.ascontiguousarray(depth, dtype="<f8")
        body = {"timestamp": timestamp,
                "depth_b64": base64.b64encode(depth.tobytes()).decode()}
        if color is not None:
            color = np.ascontiguousarray(color, dtype=np.uint8)
            body["color_b64"] = base64.b64encode(color.tobytes()).decode()
        if fixed_pose is not None:
            body["fixed_pose"] = [float(x)
                                  for x in np.asarray(fixed_pose).ravel()]
        resp = self._check(self._client.post(
            f"/sessions/{self.session_id}/frames", json=body))
        return resp.json()

    def info(self):
        resp = self._check(self._client.get(f"/sessions/{self.session_id}"))
        return resp.json()

    def trajectory_text(self):
        resp = self._check(self._client.get(
            f"/sessions/{self.session_id}/trajectory.txt"))
        return resp.text

    def pointcloud_bytes(self):
        resp = self._check(self._client.get(
            f"/sessions/{self.session_id}/pointcloud"))
        return resp.content

    def close_session(self):
        if self.session_id is not None:
            self._check(self._client.delete(f"/sessions/{self.session_id}"))
            self.session_id = None
