"""FastAPI service exposing the tracking engine over HTTP.

Sessions hold one engine each; frames are pushed as base64 raw buffers and
results come back as JSON. The point cloud and trajectory endpoints return
the same bytes the CLI writes to disk.
"""

import base64
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse, Response

from ..camera import Intrinsics
from ..config import build_config
from ..datasets import format_trajectory, pointcloud_bytes
from ..engine import TrackingEngine
from .schemas import (FramePush, FrameResultModel, SessionCreate,
                      SessionCreated, SessionInfo, TrajectoryPoint,
                      TrajectoryResponse)


def _decode_depth(b64, h, w):
    buf = base64.b64decode(b64)
    if len(buf) != h * w * 8:
        raise HTTPException(422, f"depth buffer is {len(buf)} bytes, "
                                 f"expected {h * w * 8}")
    return np.frombuffer(buf, dtype="<f8").reshape(h, w).copy()


def _decode_color(b64, h, w):
    if b64 is None:
        return None
    buf = base64.b64decode(b64)
    if len(buf) != h * w * 3:
        raise HTTPException(422, f"color buffer is {len(buf)} bytes, "
                                 f"expected {h * w * 3}")
    return np.frombuffer(buf, dtype=np.uint8).reshape(h, w, 3).copy()


def create_app():
    app = FastAPI(title="implifusion")
    sessions = {}

    @app.post("/sessions", response_model=SessionCreated)
    def create_session(req: SessionCreate):
        try:
            cfg = build_config(overrides=req.config)
        except (ValueError, TypeError) as e:
            raise HTTPException(422, str(e))
        im = req.intrinsics
        intr = Intrinsics(fx=im.fx, fy=im.fy, cx=im.cx, cy=im.cy,
                          width=im.width, height=im.height,
                          depth_scale=im.depth_scale)
        sid = uuid.uuid4().hex
        sessions[sid] = TrackingEngine(intr, cfg)
        return SessionCreated(session_id=sid)

    def _engine(sid):
        if sid not in sessions:
            raise HTTPException(404, f"no session {sid}")
        return sessions[sid]

    @app.post("/sessions/{sid}/frames", response_model=FrameResultModel)
    def push_frame(sid: str, req: FramePush):
        engine = _engine(sid)
        intr = engine.intrinsics
        depth = _decode_depth(req.depth_b64, intr.height, intr.width)
        color = _decode_color(req.color_b64, intr.height, intr.width)
        fixed = None
        if req.fixed_pose is not None:
            if len(req.fixed_pose) != 16:
                raise HTTPException(422, "fixed_pose must hold 16 floats")
            fixed = np.array(req.fixed_pose, dtype=np.float64).reshape(4, 4)
        res = engine.process_frame(req.timestamp, depth, color,
                                   fixed_pose=fixed)
        return FrameResultModel(
            index=res.index, timestamp=res.timestamp,
            pose=[float(x) for x in res.pose.ravel()], tracked=res.tracked,
            failure_reason=res.failure_reason, iterations=res.iterations,
            correspondences=res.correspondences, model_size=res.model_size)

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def session_info(sid: str):
        engine = _engine(sid)
        return SessionInfo(session_id=sid,
                           frames_processed=len(engine.results),
                           frames_lost=engine.frames_lost,
                           model_size=len(engine.model))

    @app.get("/sessions/{sid}/trajectory", response_model=TrajectoryResponse)
    def trajectory(sid: str):
        engine = _engine(sid)
        frames = [TrajectoryPoint(timestamp=ts,
                                  pose=[float(x) for x in pose.ravel()])
                  for ts, pose in engine.trajectory()]
        return TrajectoryResponse(frames=frames)

    @app.get("/sessions/{sid}/trajectory.txt",
             response_class=PlainTextResponse)
    def trajectory_text(sid: str):
        return format_trajectory(_engine(sid).trajectory())

    @app.get("/sessions/{sid}/pointcloud")
    def pointcloud(sid: str):
        data = pointcloud_bytes(_engine(sid).model)
        return Response(content=data, media_type="application/octet-stream")

    @app.delete("/sessions/{sid}")
    def close_session(sid: str):
        _engine(sid)
        del sessions[sid]
        return {"closed": sid}

    return app


app = create_app()
