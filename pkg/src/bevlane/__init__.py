"""Decoupled 3D lane modeling: a cubic bird's-eye-view curve plus an
independent ground-height profile, with projection, matching, losses,
fitting, synthetic data, metrics and a small CLI."""

from .assignment import (
    MatchResult,
    ResampledLane2D,
    hungarian_assign,
    match_lanes,
    matching_cost,
    resample_lane,
)
from .camera import (
    CameraIntrinsics,
    ImageSpec,
    Lane2D,
    invert_to_ground,
    project_lane,
    project_point,
    project_points,
)
from .geometry import (
    BevCurve,
    HeightProfile,
    Lane3D,
    lane_from_vector,
    lane_to_vector,
    sample_lane,
)
from .losses import (
    IoUConfig,
    LossBreakdown,
    LossWeights,
    bev_iou_loss,
    classification_loss,
    endpoint_z_loss,
    height_loss,
    height_variance_reg,
    lane_iou,
    perspective_losses,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "BevCurve",
    "CameraIntrinsics",
    "HeightProfile",
    "ImageSpec",
    "IoUConfig",
    "Lane2D",
    "Lane3D",
    "LossBreakdown",
    "LossWeights",
    "MatchResult",
    "ResampledLane2D",
    "bev_iou_loss",
    "classification_loss",
    "endpoint_z_loss",
    "height_loss",
    "height_variance_reg",
    "hungarian_assign",
    "invert_to_ground",
    "lane_from_vector",
    "lane_iou",
    "lane_to_vector",
    "match_lanes",
    "matching_cost",
    "perspective_losses",
    "project_lane",
    "project_point",
    "project_points",
    "resample_lane",
    "sample_lane",
    "total_loss",
]
