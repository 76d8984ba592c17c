"""Pluggable detector backends.

Every backend reports detections in the pixel grid of the image it was
given, whatever resizing or letterboxing it does internally.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .domain import BoundingBox, Detection, ImageBuffer, ValidationError, parse_detections_file
from .synthetic import VEHICLE_COLORS

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Permanent backend failure (bad response, misconfiguration)."""

    retryable = False

    def __init__(self, message: str, *, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class RetryableBackendError(BackendError):
    """Transient failure: unreachable, timed out, overloaded."""

    retryable = True


@dataclass(frozen=True)
class BackendDescriptor:
    backend_id: str
    model_id: str
    expects_pre_masked: bool = False
    # serial backends get one detect call at a time from the pipeline
    serial: bool = False


@runtime_checkable
class DetectorBackend(Protocol):
    descriptor: BackendDescriptor

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        ...


def clamp_detections(dets: Sequence[Detection], width: int, height: int, source: str = "") -> list[Detection]:
    out = []
    for d in dets:
        clamped = d.box.clamp(width, height)
        if clamped != d.box:
            log.warning("%sbox %s clamped to %dx%d image", f"{source}: " if source else "", d.box.as_tuple(), width, height)
            d = Detection(d.class_label, d.confidence, clamped)
        out.append(d)
    return out


class BackendRegistry:
    def __init__(self) -> None:
        self._backends: dict[str, DetectorBackend] = {}

    def register(self, backend: DetectorBackend) -> None:
        bid = backend.descriptor.backend_id
        if bid in self._backends:
            raise ValueError(f"backend id {bid!r} already registered")
        self._backends[bid] = backend

    def get(self, backend_id: str) -> DetectorBackend:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise KeyError(f"unknown backend {backend_id!r}") from None

    def __iter__(self):
        return iter(self._backends.values())

    def __len__(self) -> int:
        return len(self._backends)


class FixtureBackend:
    """Replays precomputed detections keyed by image id."""

    def __init__(self, detections: Mapping[str, Sequence[Detection]], model_id: str = "fixture", backend_id: str = "fixture"):
        self._dets = {k: tuple(v) for k, v in detections.items()}
        self.descriptor = BackendDescriptor(backend_id, model_id)

    @classmethod
    def from_file(cls, path, **kwargs) -> FixtureBackend:
        with open(path, "rb") as fh:
            return cls(parse_detections_file(fh.read()), **kwargs)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        if image_id is None:
            raise BackendError("fixture backend needs an image id")
        return clamp_detections(self._dets.get(image_id, ()), image.width, image.height, "fixture")


class SyntheticBackend:
    """Exact detector for scenes rendered by :mod:`parkroi.synthetic`.

    Finds connected blobs of each class colour. Confidence is the blob area
    relative to a full vehicle, so a vehicle partly painted over by the
    pre-mask gray comes back with low confidence and is dropped below
    ``min_confidence``.
    """

    def __init__(
        self,
        vehicle_size: tuple[int, int] = (28, 36),
        min_confidence: float = 0.7,
        classes: Mapping[str, tuple[int, int, int]] = VEHICLE_COLORS,
        model_id: str = "synthetic-oracle",
    ):
        self.nominal_area = vehicle_size[0] * vehicle_size[1]
        self.min_confidence = min_confidence
        self.classes = dict(classes)
        self.descriptor = BackendDescriptor("synthetic", model_id)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        if image.channels != 3:
            return []
        px = image.pixels
        found: list[Detection] = []
        for label, color in self.classes.items():
            hit = np.all(px == np.asarray(color, dtype=np.uint8), axis=2)
            if not hit.any():
                continue
            labels, n = ndimage.label(hit)
            sizes = ndimage.sum_labels(hit, labels, index=np.arange(1, n + 1))
            for k, sl in enumerate(ndimage.find_objects(labels)):
                conf = min(1.0, float(sizes[k]) / self.nominal_area)
                if conf < self.min_confidence:
                    continue
                ys, xs = sl
                box = BoundingBox(int(xs.start), int(ys.start), int(xs.stop), int(ys.stop))
                found.append(Detection(label, conf, box))
        found.sort(key=lambda d: (d.box.y1, d.box.x1, d.class_label))
        return found


class NoisyBackend:
    """Wraps a backend and injects misses and hallucinations.

    Each returned detection is dropped with probability ``drop_rate`` and,
    independently, spawns a spurious detection of ``spurious_size`` at a
    uniformly random position with probability ``spurious_rate``. The random
    stream is seeded per image id so runs are reproducible.
    """

    def __init__(
        self,
        inner: DetectorBackend,
        drop_rate: float = 0.05,
        spurious_rate: float = 0.05,
        seed: int = 0,
        spurious_size: tuple[int, int] = (28, 36),
        spurious_class: str = "car",
    ):
        self.inner = inner
        self.drop_rate = drop_rate
        self.spurious_rate = spurious_rate
        self.seed = seed
        self.spurious_size = spurious_size
        self.spurious_class = spurious_class
        self._calls = 0
        d = inner.descriptor
        self.descriptor = BackendDescriptor(f"{d.backend_id}+noise", d.model_id, d.expects_pre_masked, d.serial)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        dets = self.inner.detect(image, image_id)
        if image_id is None:
            self._calls += 1
            key = f"#{self._calls}"
        else:
            key = image_id
        rng = random.Random(f"{self.seed}:{key}")
        sw, sh = self.spurious_size
        out = []
        for d in dets:
            if rng.random() >= self.drop_rate:
                out.append(d)
            if rng.random() < self.spurious_rate:
                x1 = rng.uniform(0, max(0, image.width - sw))
                y1 = rng.uniform(0, max(0, image.height - sh))
                box = BoundingBox(round(x1), round(y1), round(x1) + sw, round(y1) + sh).clamp(image.width, image.height)
                out.append(Detection(self.spurious_class, 0.5, box))
        return out


class LatencyBackend:
    """Sleeps for a scripted duration per call; for benchmarking the harness itself.

    ``delays_ms`` is cycled. ``sleep`` is injectable so tests can drive a
    fake clock.
    """

    def __init__(
        self,
        delays_ms: Sequence[float],
        sleep: Callable[[float], None] = time.sleep,
        model_id: str = "injected-latency",
        fail_at: int | None = None,
    ):
        if not delays_ms:
            raise ValueError("delays_ms must not be empty")
        self.delays_ms = list(delays_ms)
        self.sleep = sleep
        self.fail_at = fail_at
        self.calls = 0
        self.descriptor = BackendDescriptor("injected", model_id, serial=True)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        i = self.calls
        self.calls += 1
        if self.fail_at is not None and i >= self.fail_at:
            raise RetryableBackendError(f"injected failure at call {i}")
        self.sleep(self.delays_ms[i % len(self.delays_ms)] / 1000.0)
        return []


def _excerpt(body: bytes | str, limit: int = 200) -> str:
    text = body.decode("utf-8", "replace") if isinstance(body, bytes) else body
    return text if len(text) <= limit else text[:limit] + "..."


def parse_remote_response(body: bytes) -> tuple[list[Detection], str, float | None]:
    """Decode an inference-server response.

    Expected shape::

        {"model_id": "...", "inference_ms": 12.3,
         "detections": [{"class": "car", "confidence": 0.9, "box": [x1, y1, x2, y2]}, ...]}
    """
    try:
        doc = json.loads(body)
        if not isinstance(doc, dict) or not isinstance(doc.get("detections"), list):
            raise ValueError("missing detections list")
        dets = []
        for rec in doc["detections"]:
            conf = rec["confidence"]
            if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1:
                raise ValueError(f"confidence out of range: {conf!r}")
            dets.append(Detection(str(rec["class"]), float(conf), BoundingBox(*rec["box"])))
        model_id = str(doc.get("model_id", "remote"))
        inf = doc.get("inference_ms")
        return dets, model_id, (float(inf) if inf is not None else None)
    except (ValueError, KeyError, TypeError, ValidationError) as exc:
        raise BackendError(f"malformed backend response ({exc}): {_excerpt(body)}") from None


class RemoteBackend:
    """Sends JPEG frames to an inference server over HTTP POST.

    The request body is the JPEG; the image id, when known, travels in the
    ``X-Image-Id`` header. At most one request is in flight per instance.
    """

    def __init__(
        self,
        endpoint: str,
        timeout_s: float = 30.0,
        model_id: str = "remote",
        token: str | None = None,
        session=None,
        jpeg_quality: int = 90,
    ):
        import requests

        self.endpoint = endpoint
        self.timeout_s = timeout_s
        self.token = token
        self.jpeg_quality = jpeg_quality
        self._session = session or requests.Session()
        self._lock = threading.Lock()
        self.last_inference_ms: float | None = None
        self.descriptor = BackendDescriptor("remote", model_id, serial=True)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        import requests

        from .images import encode_jpeg

        headers = {"Content-Type": "image/jpeg"}
        if image_id:
            headers["X-Image-Id"] = image_id
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = encode_jpeg(image, self.jpeg_quality)
        with self._lock:
            try:
                resp = self._session.post(self.endpoint, data=body, headers=headers, timeout=self.timeout_s)
            except (requests.Timeout, requests.ConnectionError) as exc:
                raise RetryableBackendError(f"inference endpoint {self.endpoint} unreachable: {exc}") from exc
        if resp.status_code != 200:
            cls = RetryableBackendError if resp.status_code in (429, 502, 503, 504) else BackendError
            raise cls(
                f"inference endpoint returned HTTP {resp.status_code}: {_excerpt(resp.content)}",
                status_code=resp.status_code,
            )
        dets, model_id, inf_ms = parse_remote_response(resp.content)
        self.last_inference_ms = inf_ms
        if model_id != self.descriptor.model_id:
            self.descriptor = BackendDescriptor("remote", model_id, serial=True)
        return clamp_detections(dets, image.width, image.height, "remote")


class UltralyticsBackend:
    """On-device YOLO inference through the optional ``ultralytics`` package.

    Install with ``pip install parkroi[yolo]``. Weights are not shipped.
    Ultralytics already maps letterboxed predictions back to the input
    image, so boxes are used as returned.
    """

    def __init__(self, weights: str, model_id: str | None = None):
        try:
            from ultralytics import YOLO
        except ImportError as exc:
            raise BackendError("ultralytics is not installed; pip install parkroi[yolo]") from exc
        self._model = YOLO(weights)
        self._lock = threading.Lock()
        self.descriptor = BackendDescriptor("ultralytics", model_id or str(weights), serial=True)

    def detect(self, image: ImageBuffer, image_id: str | None = None) -> list[Detection]:
        # ultralytics expects BGR arrays
        frame = np.ascontiguousarray(image.pixels[:, :, ::-1])
        with self._lock:
            results = self._model(frame, verbose=False)
        names = self._model.names
        dets = []
        for r in results:
            for xyxy, conf, cls in zip(r.boxes.xyxy.tolist(), r.boxes.conf.tolist(), r.boxes.cls.tolist()):
                dets.append(Detection(str(names[int(cls)]), float(conf), BoundingBox(*xyxy)))
        return clamp_detections(dets, image.width, image.height, "ultralytics")
