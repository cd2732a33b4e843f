"""Tracking and mapping back end."""

from .bundle_adjustment import BAProblem, BAResult, solve
from .mapping import KeyFrame, MapPoint, WorldMap, insert_keyframe, triangulate
from .matching import MatchParams, Matches, match_by_projection, match_exhaustive
from .pnp import PnPResult, RansacParams, p3p_solve, pnp_ransac, refine_pose
from .tracker import (FrameRecord, SlamTracker, TrackerConfig, TrackingResult, keyframe_decision,
                      local_bundle_adjustment, run_pipeline, track_sequence)

__all__ = [
    "BAProblem", "BAResult", "solve", "KeyFrame", "MapPoint", "WorldMap", "insert_keyframe",
    "triangulate", "MatchParams", "Matches", "match_by_projection", "match_exhaustive",
    "PnPResult", "RansacParams", "p3p_solve", "pnp_ransac", "refine_pose", "FrameRecord",
    "SlamTracker", "TrackerConfig", "TrackingResult", "keyframe_decision",
    "local_bundle_adjustment", "run_pipeline", "track_sequence",
]
