"""Frame-to-model tracking engine: preprocess, self-evaluate, register
against the model prediction, fuse, and cull, one frame at a time."""

from dataclasses import dataclass, field

import numpy as np

from . import frames as frames_mod
from . import fusion as fusion_mod
from . import raycast as raycast_mod
from . import registration as reg_mod
from .config import RunConfig
from .datasets import write_pointcloud, write_trajectory


@dataclass
class FrameResult:
    index: int
    timestamp: float
    pose: np.ndarray
    tracked: bool
    failure_reason: str = ""
    iterations: int = 0
    correspondences: int = 0
    mean_residual: float = 0.0
    model_size: int = 0


@dataclass
class TrackingEngine:
    intrinsics: object
    config: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        self.model = fusion_mod.GlobalModel(eta=self.config.eta)
        self.pred_params = self.config.prediction_params()
        self.reg_config = self.config.registration_config()
        self.fusion_config = self.config.fusion_config()
        self.results = []
        self.frame_idx = 0
        self.last_pose = np.eye(4)

    @property
    def frames_lost(self):
        return sum(1 for r in self.results if not r.tracked)

    def trajectory(self):
        """(timestamp, pose) for every tracked frame; skipped frames are
        absent."""
        return [(r.timestamp, r.pose) for r in self.results if r.tracked]

    def _prepare(self, timestamp, depth, color):
        cfg = self.config
        frame = frames_mod.preprocess_frame(
            depth, color, self.intrinsics, timestamp=timestamp,
            sigma_s=cfg.bilateral_sigma_s, sigma_r=cfg.bilateral_sigma_r,
            support_k=cfg.support_k, support_window=cfg.support_window,
            support_min=cfg.support_r_min, support_max=cfg.support_r_max)
        raycast_mod.predict_frame_maps(
            frame, self.pred_params,
            conf_epsilon=cfg.conf_epsilon, conf_sigma=cfg.conf_sigma)
        return frame

    def _predict(self, pose):
        if self.config.predictor == "splat":
            return raycast_mod.splat_baseline(
                self.model, pose, self.intrinsics, self.pred_params)
        return raycast_mod.predict_model_maps(
            self.model, pose, self.intrinsics, self.pred_params)

    def process_frame(self, timestamp, depth, color=None, fixed_pose=None):
        """Track one frame and fuse it; returns a FrameResult.

        With fixed_pose the registration step is skipped (ground-truth-pose
        fusion for studies). On tracking failure the frame is counted lost
        and not fused.
        """
        idx = self.frame_idx
        self.frame_idx += 1
        frame = self._prepare(timestamp, depth, color)

        if fixed_pose is not None:
            pose = np.asarray(fixed_pose, dtype=np.float64).copy()
            result = FrameResult(index=idx, timestamp=timestamp, pose=pose,
                                 tracked=True)
        elif idx == 0 or len(self.model) == 0:
            pose = np.eye(4)
            result = FrameResult(index=idx, timestamp=timestamp, pose=pose,
                                 tracked=True)
        else:
            predicted = self._predict(self.last_pose)
            reg = reg_mod.solve_pose(frame, predicted, None, self.reg_config,
                                     initial_pose=self.last_pose)
            result = FrameResult(
                index=idx, timestamp=timestamp, pose=reg.pose,
                tracked=not reg.failure, failure_reason=reg.failure_reason,
                iterations=reg.iterations,
                correspondences=reg.num_correspondences,
                mean_residual=reg.mean_residual)
            pose = reg.pose

        if result.tracked:
            fusion_mod.integrate(self.model, frame, pose, idx,
                                 cfg=self.fusion_config)
            fusion_mod.cull(self.model, idx, self.fusion_config)
            self.last_pose = pose
        result.model_size = len(self.model)
        self.results.append(result)
        return result

    def export_trajectory(self, path):
        write_trajectory(path, self.trajectory())

    def export_pointcloud(self, path):
        write_pointcloud(path, self.model)
