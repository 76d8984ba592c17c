"""Latency benchmarking with warmup discard.

The standard protocol times 1500 detect calls on one fixed image and drops
the first 100 before computing mean and sample standard deviation. Calls
run strictly one at a time. Images are preloaded, so timings cover the
detect call (image hand-off plus inference) and exclude disk reads.

Thermal throttling shows up as drift over the run; every raw sample keeps
its wall-clock timestamp so the drift is visible in the log. Run devices
such as single-board computers in a temperature-controlled enclosure.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import random
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .backends import DetectorBackend
from .domain import ImageBuffer, LatencyStats, ValidationError
from .roi import apply_pre_mask, count_all, filter_detections

log = logging.getLogger(__name__)

STANDARD_ITERATIONS = 1500
STANDARD_DISCARD = 100

# Measured TensorRT FP32 latency on an A100 (mean, std in ms). Reference
# lines for comparison charts only.
REFERENCE_A100_MS: dict[str, tuple[float, float]] = {
    "yolov8n": (3.61, 0.38),
    "yolov8x": (8.42, 0.49),
    "yolov9t": (5.12, 0.41),
    "yolov9e": (10.69, 0.39),
    "yolov10n": (3.14, 0.11),
    "yolov10x": (7.46, 0.28),
    "yolo11n": (3.61, 0.21),
    "yolo11x": (7.87, 0.42),
}


class BenchFailed(RuntimeError):
    def __init__(self, message: str, samples: list[Sample]):
        super().__init__(message)
        self.samples = samples


@dataclass(frozen=True)
class BenchPlan:
    backend_id: str
    image_set: tuple[str, ...]
    total_iterations: int = STANDARD_ITERATIONS
    warmup_discard: int = STANDARD_DISCARD
    randomize: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.image_set:
            raise ValidationError("image_set must not be empty")
        if self.total_iterations <= 0:
            raise ValidationError("total_iterations must be positive")
        if not 0 <= self.warmup_discard < self.total_iterations:
            raise ValidationError(
                f"warmup_discard ({self.warmup_discard}) must be < total_iterations ({self.total_iterations})"
            )

    def schedule(self) -> list[str]:
        """Image id for each iteration."""
        ids = [self.image_set[i % len(self.image_set)] for i in range(self.total_iterations)]
        if self.randomize:
            random.Random(self.seed).shuffle(ids)
        return ids


@dataclass(frozen=True)
class Sample:
    index: int
    timestamp: float
    duration_ms: float
    image_id: str


@dataclass
class BenchResult:
    plan: BenchPlan
    stats: LatencyStats | None
    samples: list[Sample] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None


def summarize(durations_ms: Sequence[float], discarded: int = 0) -> LatencyStats:
    """Mean, sample std (n-1), min and max. Sums are compensated (``math.fsum``)."""
    n = len(durations_ms)
    if n == 0:
        raise ValidationError("no samples to summarize")
    mean = math.fsum(durations_ms) / n
    if n > 1:
        var = math.fsum((x - mean) ** 2 for x in durations_ms) / (n - 1)
    else:
        var = 0.0
    lo, hi = min(durations_ms), max(durations_ms)
    mean = min(max(mean, lo), hi)
    return LatencyStats(n, discarded, mean, math.sqrt(var), lo, hi)


def _end_to_end(backend: DetectorBackend, mask, roi_method: str, allowed) -> Callable[[ImageBuffer, str], object]:
    def call(image: ImageBuffer, image_id: str):
        if roi_method == "pre":
            return count_all(backend.detect(apply_pre_mask(image, mask), image_id), allowed)
        return filter_detections(backend.detect(image, image_id), mask, allowed, image.shape)

    return call


def run_bench(
    plan: BenchPlan,
    backend: DetectorBackend,
    images: Mapping[str, ImageBuffer],
    *,
    clock: Callable[[], float] = time.perf_counter,
    wall_clock: Callable[[], float] = time.time,
    raw_path: str | Path | None = None,
    summary_path: str | Path | None = None,
    hardware_tag: str = "unknown",
    end_to_end: tuple | None = None,
) -> BenchResult:
    """Time ``plan.total_iterations`` serial detect calls.

    Args:
        plan: Iteration count, warmup discard and image order.
        backend: Detector under test.
        images: Preloaded images by id; every id in the plan must be present.
        clock: Monotonic timer in seconds.
        wall_clock: Timestamp source recorded per sample.
        raw_path: Optional CSV for raw samples.
        summary_path: Optional JSON summary, merged by (hardware, backend, model).
        hardware_tag: Label for the machine under test.
        end_to_end: ``(mask, roi_method, allowed_classes)`` to time ROI
            handling together with inference instead of inference alone.

    Raises:
        BenchFailed: the backend raised mid-run. Samples collected so far are
            written to ``raw_path``/``summary_path`` before raising.
    """
    missing = sorted(set(plan.image_set) - set(images))
    if missing:
        raise ValidationError(f"images not loaded: {missing}")
    call = _end_to_end(backend, *end_to_end) if end_to_end else backend.detect
    samples: list[Sample] = []
    result = BenchResult(plan, None, samples)
    try:
        for i, image_id in enumerate(plan.schedule()):
            image = images[image_id]
            ts = wall_clock()
            t0 = clock()
            call(image, image_id)
            t1 = clock()
            samples.append(Sample(i, ts, (t1 - t0) * 1000.0, image_id))
    except Exception as exc:
        result.status = "failed"
        result.error = f"{type(exc).__name__}: {exc}"
        used = [s.duration_ms for s in samples[plan.warmup_discard :]]
        if used:
            result.stats = summarize(used, min(plan.warmup_discard, len(samples)))
        _persist(result, backend, raw_path, summary_path, hardware_tag)
        raise BenchFailed(f"backend failed at iteration {len(samples)}: {exc}", samples) from exc
    result.stats = summarize([s.duration_ms for s in samples[plan.warmup_discard :]], plan.warmup_discard)
    _persist(result, backend, raw_path, summary_path, hardware_tag)
    return result


def standard_latency_protocol(
    backend: DetectorBackend,
    image: ImageBuffer,
    *,
    iterations: int = STANDARD_ITERATIONS,
    discard: int = STANDARD_DISCARD,
    image_id: str = "standard",
    **kwargs,
) -> LatencyStats:
    plan = BenchPlan(backend.descriptor.backend_id, (image_id,), iterations, discard)
    return run_bench(plan, backend, {image_id: image}, **kwargs).stats


def _persist(result: BenchResult, backend: DetectorBackend, raw_path, summary_path, hardware_tag: str) -> None:
    if raw_path is not None:
        write_raw_samples(raw_path, result.samples, result.plan.warmup_discard)
    if summary_path is not None:
        d = backend.descriptor
        entry = {
            "hardware": hardware_tag,
            "backend_id": d.backend_id,
            "model_id": d.model_id,
            "status": result.status,
            "error": result.error,
            "total_iterations": result.plan.total_iterations,
            "stats": result.stats.to_dict() if result.stats else None,
        }
        update_summary(summary_path, entry)


def write_raw_samples(path: str | Path, samples: Sequence[Sample], warmup_discard: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "timestamp", "duration_ms", "image_id", "discarded"])
        for s in samples:
            w.writerow([s.index, f"{s.timestamp:.6f}", repr(s.duration_ms), s.image_id, int(s.index < warmup_discard)])


def read_raw_samples(path: str | Path) -> list[Sample]:
    with open(path, newline="") as fh:
        return [
            Sample(int(r["index"]), float(r["timestamp"]), float(r["duration_ms"]), r["image_id"])
            for r in csv.DictReader(fh)
        ]


def _summary_key(entry: Mapping) -> str:
    return f"{entry['hardware']}|{entry['backend_id']}|{entry['model_id']}"


def update_summary(path: str | Path, entry: Mapping) -> dict:
    """Insert or replace ``entry`` in the summary JSON keyed by hardware/backend/model."""
    path = Path(path)
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc[_summary_key(entry)] = dict(entry)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc


@dataclass(frozen=True)
class TaggedStats:
    hardware: str
    model: str
    stats: LatencyStats


def load_summary(path: str | Path) -> list[TaggedStats]:
    doc = json.loads(Path(path).read_text())
    return [
        TaggedStats(e["hardware"], e["model_id"], LatencyStats.from_dict(e["stats"]))
        for e in doc.values()
        if e.get("stats")
    ]


def compare_report(entries: Sequence[TaggedStats], reference: Mapping[str, tuple[float, float]] | None = None):
    """Table of (hardware, model, mean, std, n) rows and a log-scale SVG chart."""
    from .charts import latency_chart

    if not entries:
        raise ValidationError("compare_report needs at least one entry")
    rows = sorted(
        (
            {
                "hardware": e.hardware,
                "model": e.model,
                "mean_ms": e.stats.mean_ms,
                "std_ms": e.stats.std_ms,
                "samples": e.stats.samples_used,
            }
            for e in entries
        ),
        key=lambda r: (r["hardware"], r["model"]),
    )
    return rows, latency_chart(rows, reference=reference)


def format_table(rows: Sequence[Mapping]) -> str:
    lines = [f"{'hardware':<20} {'model':<16} {'mean_ms':>12} {'std_ms':>10} {'n':>6}"]
    for r in rows:
        lines.append(f"{r['hardware']:<20} {r['model']:<16} {r['mean_ms']:>12.3f} {r['std_ms']:>10.3f} {r['samples']:>6}")
    return "\n".join(lines)
