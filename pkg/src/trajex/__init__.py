"""Vehicle trajectory extraction from camera and radar detections."""

from .evaluation import (
    BiasCorrector,
    BiasTable,
    ErrorCurve,
    ReferenceRun,
    aggregate_bias_std,
    comparison_table,
    debias,
    distance_to_time,
    error_curve,
    interpolate_measurement,
    summary_stats,
)
from .geometry import (
    BoundingBox,
    Calibration,
    FrameTransform,
    Homography,
    HomographyEstimator,
    SimilarityTransformEstimator,
    TransformRegistry,
    estimate_frame_transform,
    estimate_homography,
)
from .ingest import CameraDetection, RadarDetection, parse_camera_log, parse_radar_log
from .pipeline import TrajectoryExtractor
from .postprocess import SmoothedTrajectory, export_trajectories, rts_smooth
from .simulator import ScenarioConfig, reference_runs, simulate
from .tracker import Tracker, TrackerConfig

__all__ = [
    "BiasCorrector", "BiasTable", "BoundingBox", "Calibration", "CameraDetection",
    "ErrorCurve", "FrameTransform", "Homography", "HomographyEstimator",
    "RadarDetection", "ReferenceRun", "ScenarioConfig", "SimilarityTransformEstimator",
    "SmoothedTrajectory", "Tracker", "TrackerConfig", "TrajectoryExtractor",
    "TransformRegistry", "aggregate_bias_std", "comparison_table", "debias",
    "distance_to_time", "error_curve", "estimate_frame_transform", "estimate_homography",
    "export_trajectories", "interpolate_measurement", "parse_camera_log",
    "parse_radar_log", "reference_runs", "rts_smooth", "simulate", "summary_stats",
]
