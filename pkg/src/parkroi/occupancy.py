"""Occupancy records and confusion-matrix evaluation.

Positive class is an *empty* spot: TP is a correctly predicted empty spot,
TN a correctly predicted vehicle, FP an empty prediction where a vehicle
stands, FN a vehicle prediction on an empty spot.

Labels are per-image vehicle counts, not per-spot states. To get per-spot
tallies we assume the predicted-occupied spots overlap the truly occupied
ones as much as possible; this is the assignment with the fewest errors, so
metrics computed this way are an upper bound on per-spot performance.
"""

from __future__ import annotations

import csv
import io
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

from .domain import ConfusionCounts, CountResult, MetricSet, OccupancyRecord, ValidationError


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    vehicle_count: int

    def __post_init__(self) -> None:
        if self.vehicle_count < 0:
            raise ValidationError(f"{self.image_id}: vehicle_count must be >= 0")


@dataclass(frozen=True)
class ImageEvaluation:
    image_id: str
    label_vehicles: int
    predicted_vehicles: int
    confusion: ConfusionCounts

    def to_dict(self) -> dict:
        c = self.confusion
        return {
            "image_id": self.image_id,
            "label_vehicles": self.label_vehicles,
            "predicted_vehicles": self.predicted_vehicles,
            "tp": c.tp,
            "tn": c.tn,
            "fp": c.fp,
            "fn": c.fn,
        }


@dataclass(frozen=True)
class DatasetEvaluation:
    confusion: ConfusionCounts
    metrics: MetricSet
    rows: tuple[ImageEvaluation, ...]

    def to_dict(self) -> dict:
        return {
            "n_images": len(self.rows),
            "confusion": {
                "tp": self.confusion.tp,
                "tn": self.confusion.tn,
                "fp": self.confusion.fp,
                "fn": self.confusion.fn,
                "matrix": self.confusion.as_matrix(),
                "matrix_axes": "rows=truth[empty, vehicle], cols=predicted[empty, vehicle]",
            },
            "metrics": self.metrics.to_dict(),
            "per_image": [r.to_dict() for r in self.rows],
        }


def occupancy(count: CountResult, capacity: int, lot_id: str, timestamp: float, model_id: str) -> OccupancyRecord:
    if capacity <= 0:
        raise ValidationError("capacity must be positive")
    vehicles = count.in_roi_count
    return OccupancyRecord(lot_id, float(timestamp), capacity, vehicles, max(0, capacity - vehicles), model_id)


def confusion_from_counts(label_vehicles: int, predicted_vehicles: int, capacity: int) -> ConfusionCounts:
    """Per-spot confusion for one image from vehicle counts (maximal overlap)."""
    if capacity <= 0:
        raise ValidationError("capacity must be positive")
    if label_vehicles < 0 or predicted_vehicles < 0:
        raise ValidationError("counts must be non-negative")
    if label_vehicles > capacity:
        raise ValidationError(f"label count {label_vehicles} exceeds capacity {capacity}")
    lab = label_vehicles
    pred = min(predicted_vehicles, capacity)
    if pred <= lab:
        return ConfusionCounts(tp=capacity - lab, tn=pred, fp=lab - pred, fn=0)
    return ConfusionCounts(tp=capacity - pred, tn=lab, fp=0, fn=pred - lab)


def _ratio(num: int | float, den: int | float, name: str, undefined: set[str]) -> float:
    if den == 0:
        undefined.add(name)
        return 0.0
    return num / den


def metrics(confusion: ConfusionCounts) -> MetricSet:
    """Accuracy, precision, recall, F1, sensitivity, specificity, balanced accuracy.

    A metric whose denominator is zero is reported as 0.0 and its name is
    listed in ``MetricSet.undefined``.
    """
    c = confusion
    if c.total == 0:
        raise EvaluationError("confusion counts are all zero")
    undefined: set[str] = set()
    accuracy = (c.tp + c.tn) / c.total
    precision = _ratio(c.tp, c.tp + c.fp, "precision", undefined)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", undefined)
    f1 = _ratio(2 * precision * recall, precision + recall, "f1", undefined)
    sensitivity = _ratio(c.tp, c.tp + c.fn, "sensitivity", undefined)
    specificity = _ratio(c.tn, c.tn + c.fp, "specificity", undefined)
    balanced = (sensitivity + specificity) / 2
    if "sensitivity" in undefined or "specificity" in undefined:
        undefined.add("balanced_accuracy")
    return MetricSet(accuracy, precision, recall, f1, sensitivity, specificity, balanced, frozenset(undefined))


def evaluate_dataset(
    labels: Sequence[LabeledImage],
    predictions: Mapping[str, CountResult],
    capacity: int,
) -> DatasetEvaluation:
    if not labels:
        raise EvaluationError("no labeled images")
    missing = [lab.image_id for lab in labels if lab.image_id not in predictions]
    if missing:
        raise EvaluationError(f"no prediction for {len(missing)} image(s): {', '.join(missing)}")
    rows = []
    total = ConfusionCounts()
    for lab in labels:
        pred = predictions[lab.image_id].in_roi_count
        conf = confusion_from_counts(lab.vehicle_count, pred, capacity)
        total = total + conf
        rows.append(ImageEvaluation(lab.image_id, lab.vehicle_count, pred, conf))
    return DatasetEvaluation(total, metrics(total), tuple(rows))


def dataset_filter(labels: Iterable[LabeledImage]) -> tuple[list[LabeledImage], float]:
    """Drop images without vehicles. Returns the kept labels and the removed fraction."""
    labels = list(labels)
    kept = [lab for lab in labels if lab.vehicle_count >= 1]
    removed = (len(labels) - len(kept)) / len(labels) if labels else 0.0
    return kept, removed


def read_labels_csv(text: str) -> list[LabeledImage]:
    """Parse ``image_id,vehicle_count`` rows (header required)."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"image_id", "vehicle_count"} <= set(reader.fieldnames):
        raise EvaluationError("labels file needs an 'image_id,vehicle_count' header")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(LabeledImage(row["image_id"].strip(), int(row["vehicle_count"])))
        except (ValueError, TypeError) as exc:
            raise EvaluationError(f"labels line {lineno}: {exc}") from None
    return out


def write_labels_csv(labels: Iterable[LabeledImage]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["image_id", "vehicle_count"])
    for lab in labels:
        w.writerow([lab.image_id, lab.vehicle_count])
    return buf.getvalue()
