"""Feature-based RGB-D style visual SLAM driven by virtual depth, mask and keypoint sensors."""

from .exceptions import (BehindCameraError, ConfigError, DataError, DegenerateInputError,
                         EndOfSequence, FormatError, GenerationError, InvalidDepthError,
                         RenderError, TrackingFailure, UndefinedCVError, VSSlamError)
from .geometry import (CameraIntrinsics, Pose, backproject, compose, inverse, look_at, project,
                       transform)
from .frontend import FrontEnd, FrontEndConfig, FrontEndOutput, process_frame
from .backend import SlamTracker, TrackerConfig, run_pipeline, track_sequence
from .evaluation import (DepthScaler, TrajectoryAligner, ate_rmse, cv, depth_frame_metrics,
                         umeyama_align)

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "ConfigError", "DataError", "DegenerateInputError", "EndOfSequence",
    "FormatError", "GenerationError", "InvalidDepthError", "RenderError", "TrackingFailure",
    "UndefinedCVError", "VSSlamError", "CameraIntrinsics", "Pose", "backproject", "compose",
    "inverse", "look_at", "project", "transform", "FrontEnd", "FrontEndConfig", "FrontEndOutput",
    "process_frame", "SlamTracker", "TrackerConfig", "run_pipeline", "track_sequence",
    "DepthScaler", "TrajectoryAligner", "ate_rmse", "cv", "depth_frame_metrics", "umeyama_align",
]
