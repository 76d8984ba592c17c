"""Core data types shared by every part of the toolkit.

Coordinates follow raster convention: origin at the top-left pixel, x grows
rightward, y grows downward. Box coordinates are pixel *edges*, so a box that
covers the whole image is ``(0, 0, width, height)``.

All types are immutable once built and safe to share between threads.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np


class ValidationError(ValueError):
    """Raised when input data violates a type invariant."""


class DetectionsFileError(ValidationError):
    """A detections file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def round_half_down(value: float) -> int:
    """Round to the nearest integer, ties toward zero."""
    if value >= 0:
        return math.ceil(value - 0.5)
    return math.floor(value + 0.5)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit raster image, row-major, shape ``(height, width, channels)``.

    Grayscale images have one channel, colour images three (RGB order).
    The wrapped array is copied on construction and marked read-only.
    """

    pixels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValidationError(f"image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValidationError("image has zero width or height")
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.integer) and arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValidationError("pixel values must fit in 8 bits")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_bytes(cls, width: int, height: int, channels: int, data: bytes) -> ImageBuffer:
        if width <= 0 or height <= 0:
            raise ValidationError("image has zero width or height")
        if channels not in (1, 3):
            raise ValidationError(f"channels must be 1 or 3, got {channels}")
        if len(data) != width * height * channels:
            raise ValidationError(
                f"data length {len(data)} != {width}x{height}x{channels}"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        """``(width, height)``."""
        return (self.width, self.height)

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Boolean pixel grid; ``True`` marks the monitored region.

    An all-false grid is rejected unless ``allow_empty`` is set, which is
    meant for intersections and tests, never for masks loaded from disk.
    """

    bits: np.ndarray
    allow_empty: bool = field(default=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        arr = np.array(self.bits, dtype=bool, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValidationError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
        if not self.allow_empty and not arr.any():
            raise ValidationError("empty ROI")
        arr.flags.writeable = False
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """``(width, height)``."""
        return (self.width, self.height)

    @property
    def roi_fraction(self) -> float:
        return float(self.bits.mean())

    def __and__(self, other: RoiMask) -> RoiMask:
        return RoiMask(self.bits & other.bits, allow_empty=True)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoiMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and np.array_equal(self.bits, other.bits)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class BoundingBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"box coordinate {name} must be a finite number, got {v!r}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValidationError(f"box corners out of order: {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def center(self) -> tuple[int, int]:
        """Integer pixel holding the box centre (ties rounded toward zero)."""
        return (
            round_half_down((self.x1 + self.x2) / 2),
            round_half_down((self.y1 + self.y2) / 2),
        )

    def clamp(self, width: int, height: int) -> BoundingBox:
        def c(v: float, hi: int) -> float:
            return min(max(v, 0), hi)

        return BoundingBox(c(self.x1, width), c(self.y1, height), c(self.x2, width), c(self.y2, height))

    def iou(self, other: BoundingBox) -> float:
        ix = max(0.0, min(self.x2, other.x2) - max(self.x1, other.x1))
        iy = max(0.0, min(self.y2, other.y2) - max(self.y1, other.y1))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class Detection:
    class_label: str
    confidence: float
    box: BoundingBox

    def __post_init__(self) -> None:
        if not isinstance(self.class_label, str) or not self.class_label:
            raise ValidationError("class_label must be a non-empty string")
        c = self.confidence
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not (0.0 <= c <= 1.0):
            raise ValidationError(f"confidence out of range: {c!r}")


@dataclass(frozen=True)
class CountResult:
    """Detections of the allowed classes in one image, raw and inside the ROI."""

    total_detections: int
    in_roi_count: int
    per_class_in_roi: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        per_class = MappingProxyType(dict(self.per_class_in_roi))
        object.__setattr__(self, "per_class_in_roi", per_class)
        if self.total_detections < 0 or self.in_roi_count < 0:
            raise ValidationError("counts must be non-negative")
        if self.in_roi_count > self.total_detections:
            raise ValidationError("in_roi_count exceeds total_detections")
        if sum(per_class.values()) != self.in_roi_count:
            raise ValidationError("per-class counts do not sum to in_roi_count")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountResult):
            return NotImplemented
        return (
            self.total_detections == other.total_detections
            and self.in_roi_count == other.in_roi_count
            and dict(self.per_class_in_roi) == dict(other.per_class_in_roi)
        )

    def __hash__(self) -> int:
        return hash((self.total_detections, self.in_roi_count, tuple(sorted(self.per_class_in_roi.items()))))

    def to_dict(self) -> dict:
        return {
            "total_detections": self.total_detections,
            "in_roi_count": self.in_roi_count,
            "per_class_in_roi": dict(sorted(self.per_class_in_roi.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> CountResult:
        return cls(
            int(data["total_detections"]),
            int(data["in_roi_count"]),
            {str(k): int(v) for k, v in dict(data.get("per_class_in_roi", {})).items()},
        )


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-spot confusion tallies. Positive class is *empty space*."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValidationError(f"{name} must be a non-negative integer, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: ConfusionCounts) -> ConfusionCounts:
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)

    def as_matrix(self) -> list[list[int]]:
        """Rows are truth (empty, vehicle), columns prediction (empty, vehicle)."""
        return [[self.tp, self.fn], [self.fp, self.tn]]


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    sensitivity: float
    specificity: float
    balanced_accuracy: float
    # metrics whose denominator was zero (reported as 0.0)
    undefined: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} out of [0, 1]: {v}")

    def to_dict(self) -> dict:
        out: dict = {name: getattr(self, name) for name in METRIC_NAMES}
        out["undefined"] = sorted(self.undefined)
        return out


METRIC_NAMES = (
    "accuracy",
    "precision",
    "recall",
    "f1",
    "sensitivity",
    "specificity",
    "balanced_accuracy",
)


@dataclass(frozen=True)
class OccupancyRecord:
    lot_id: str
    timestamp: float
    capacity: int
    vehicles: int
    free: int
    model_id: str

    def __post_init__(self) -> None:
        if self.vehicles < 0:
            raise ValidationError("vehicles must be non-negative")
        if self.capacity <= 0:
            raise ValidationError("capacity must be positive")
        if self.free != max(0, self.capacity - self.vehicles):
            raise ValidationError("free must equal max(0, capacity - vehicles)")

    @property
    def key(self) -> str:
        """Idempotency key for at-least-once delivery."""
        return f"{self.lot_id}@{self.timestamp!r}"

    def to_dict(self) -> dict:
        return {
            "lot_id": self.lot_id,
            "timestamp": self.timestamp,
            "capacity": self.capacity,
            "vehicles": self.vehicles,
            "free": self.free,
            "model_id": self.model_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> OccupancyRecord:
        return cls(
            lot_id=str(data["lot_id"]),
            timestamp=float(data["timestamp"]),
            capacity=int(data["capacity"]),
            vehicles=int(data["vehicles"]),
            free=int(data["free"]),
            model_id=str(data["model_id"]),
        )


@dataclass(frozen=True)
class LatencyStats:
    samples_used: int
    discarded_warmup: int
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float

    def __post_init__(self) -> None:
        if self.samples_used <= 0:
            raise ValidationError("samples_used must be positive")
        if self.std_ms < 0:
            raise ValidationError("std_ms must be non-negative")
        # mean of floats can drift a few ulps past min/max
        slack = 1e-9 * max(1.0, abs(self.max_ms))
        if not (self.min_ms - slack <= self.mean_ms <= self.max_ms + slack):
            raise ValidationError("mean outside [min, max]")

    def to_dict(self) -> dict:
        return {
            "samples_used": self.samples_used,
            "discarded_warmup": self.discarded_warmup,
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> LatencyStats:
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


# --- detections fixture files -------------------------------------------------

def _parse_record(line_no: int, raw: object) -> tuple[str, Detection]:
    if not isinstance(raw, dict):
        raise DetectionsFileError(line_no, "record is not an object")
    try:
        image = raw["image"]
        label = raw["class"]
        conf = raw["confidence"]
        box = raw["box"]
    except KeyError as exc:
        raise DetectionsFileError(line_no, f"missing field {exc.args[0]!r}") from None
    if not isinstance(image, str) or not image:
        raise DetectionsFileError(line_no, "image must be a non-empty string")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)):
        raise DetectionsFileError(line_no, "confidence must be a number")
    if not 0.0 <= conf <= 1.0:
        raise DetectionsFileError(line_no, f"confidence out of range: {conf}")
    if not isinstance(box, list) or len(box) != 4:
        raise DetectionsFileError(line_no, "box must be a list of 4 numbers")
    try:
        det = Detection(label, float(conf), BoundingBox(*box))
    except (ValidationError, TypeError) as exc:
        raise DetectionsFileError(line_no, str(exc)) from None
    return image, det


def parse_detections_file(data: bytes) -> dict[str, list[Detection]]:
    """Parse a line-delimited JSON detections file.

    Each non-blank line holds one detection with fields ``image``, ``class``,
    ``confidence`` and ``box`` (``[x1, y1, x2, y2]``); other fields are
    ignored. Detections are grouped by image id, keeping file order.
    """
    grouped: dict[str, list[Detection]] = {}
    text = data.decode("utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DetectionsFileError(line_no, f"malformed JSON: {exc.msg}") from None
        image, det = _parse_record(line_no, raw)
        grouped.setdefault(image, []).append(det)
    return grouped


def _num(v: float) -> int | float:
    return int(v) if float(v).is_integer() else float(v)


def detection_to_record(image_id: str, det: Detection) -> dict:
    return {
        "image": image_id,
        "class": det.class_label,
        "confidence": float(det.confidence),
        "box": [_num(v) for v in det.box.as_tuple()],
    }


def serialize_detections(grouped: Mapping[str, Iterable[Detection]]) -> bytes:
    lines = [
        json.dumps(detection_to_record(image_id, det), sort_keys=True)
        for image_id, dets in grouped.items()
        for det in dets
    ]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def normalize_detections_text(data: bytes) -> bytes:
    """Canonical form of a detections file.

    Drops blank lines and unknown fields, groups records by image in order of
    first appearance, and writes each record as sorted-key JSON.
    """
    order: dict[str, list[dict]] = {}
    for line in data.decode("utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        rec = {
            "image": raw["image"],
            "class": raw["class"],
            "confidence": float(raw["confidence"]),
            "box": [_num(v) for v in raw["box"]],
        }
        order.setdefault(rec["image"], []).append(rec)
    lines = [json.dumps(r, sort_keys=True) for recs in order.values() for r in recs]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""
