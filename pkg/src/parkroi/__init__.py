"""Parking occupancy from object detections with pixel-wise ROI masks."""

from .domain import (
    BoundingBox,
    ConfusionCounts,
    CountResult,
    Detection,
    ImageBuffer,
    LatencyStats,
    MetricSet,
    OccupancyRecord,
    RoiMask,
    ValidationError,
    parse_detections_file,
)
from .occupancy import confusion_from_counts, evaluate_dataset, metrics, occupancy
from .roi import apply_pre_mask, filter_detections, load_mask, point_in_roi

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ConfusionCounts",
    "CountResult",
    "Detection",
    "ImageBuffer",
    "LatencyStats",
    "MetricSet",
    "OccupancyRecord",
    "RoiMask",
    "ValidationError",
    "apply_pre_mask",
    "confusion_from_counts",
    "evaluate_dataset",
    "filter_detections",
    "load_mask",
    "metrics",
    "occupancy",
    "parse_detections_file",
    "point_in_roi",
]
