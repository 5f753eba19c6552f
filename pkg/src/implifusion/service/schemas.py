"""Request and response models for the tracking service."""

from typing import Optional

from pydantic import BaseModel


class IntrinsicsModel(BaseModel):
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 5000.0


class SessionCreate(BaseModel):
    intrinsics: IntrinsicsModel
    config: dict = {}            # RunConfig field overrides


class SessionCreated(BaseModel):
    session_id: str


class FramePush(BaseModel):
    timestamp: float
    depth_b64: str               # base64 little-endian float64 meters, h*w
    color_b64: Optional[str] = None   # base64 uint8 rgb, h*w*3
    fixed_pose: Optional[list] = None  # 16 floats, row-major


class FrameResultModel(BaseModel):
    index: int
    timestamp: float
    pose: list                   # 16 floats, row-major
    tracked: bool
    failure_reason: str = ""
    iterations: int = 0
    correspondences: int = 0
    model_size: int = 0


class SessionInfo(BaseModel):
    session_id: str
    frames_processed: int
    frames_lost: int
    model_size: int


class TrajectoryPoint(BaseModel):
    timestamp: float
    pose: list                   # 16 floats, row-major


class TrajectoryResponse(BaseModel):
    frames: list[TrajectoryPoint]
