"""RGB-D tracking and depth fusion on closed-form Hermite RBF implicit surfaces."""

from .camera import Intrinsics
from .config import RunConfig, build_config
from .engine import TrackingEngine

__version__ = "0.1.0"

__all__ = ["Intrinsics", "RunConfig", "build_config", "TrackingEngine",
           "__version__"]
