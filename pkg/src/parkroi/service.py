"""The deployed capture -> detect -> count -> publish loop.

One cycle runs at a time per lot. Each record is appended to the history
file before it is handed to the publisher, and the publisher drains its
queue on a background thread while the next cycle runs. Records are keyed
by ``lot_id@timestamp`` so re-delivery after a failure is idempotent.
"""

from __future__ import annotations

import contextlib
import json
import logging
import signal
import threading
import time
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    BackendError,
    DetectorBackend,
    FixtureBackend,
    RemoteBackend,
    SyntheticBackend,
    UltralyticsBackend,
)
from .config import BackendConfig, LotConfig
from .domain import CountResult, OccupancyRecord, RoiMask
from .occupancy import occupancy
from .publish import HttpPublisher, LogPublisher, PublishError, Publisher, PublishQueue
from .roi import apply_pre_mask, count_all, filter_detections, load_mask_file
from .sources import CaptureError, CommandSource, DirectorySource, Frame, SourceExhausted

log = logging.getLogger(__name__)


def build_backend(cfg: BackendConfig) -> DetectorBackend:
    if cfg.kind == "synthetic":
        return SyntheticBackend(cfg.vehicle_size, cfg.min_confidence, model_id=cfg.model_id or "synthetic-oracle")
    if cfg.kind == "fixture":
        return FixtureBackend.from_file(cfg.fixture, model_id=cfg.model_id or "fixture")
    if cfg.kind == "remote":
        return RemoteBackend(cfg.endpoint, cfg.timeout_s, model_id=cfg.model_id or "remote", token=cfg.token)
    return UltralyticsBackend(cfg.weights, cfg.model_id)


def build_source(config: LotConfig):
    src = config.source
    if src is None:
        raise ValueError("config has no source section")
    if src.kind == "directory":
        return DirectorySource(src.path, once=src.once)
    return CommandSource(src.command, src.timeout_s)


def build_publisher(config: LotConfig) -> Publisher:
    p = config.publish
    if not p.endpoint:
        return LogPublisher()
    return HttpPublisher(p.endpoint, token=p.token, timeout_s=p.timeout_s, edge_mode=config.mode == "edge")


class HistoryWriter:
    """Append-only line-delimited record log with a single writer lock."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def append(self, record: OccupancyRecord) -> None:
        if self.path is None:
            return
        line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
        with self._lock, open(self.path, "a") as fh:
            fh.write(line)
            fh.flush()


def read_history(path: str | Path) -> list[OccupancyRecord]:
    return [
        OccupancyRecord.from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]


@dataclass
class Gauges:
    cycles: int = 0
    records: int = 0
    skipped: int = 0
    backend_failures: int = 0
    published: int = 0
    publish_failures: int = 0
    queue_depth: int = 0
    queue_dropped: int = 0
    last_ack_latency_ms: float | None = None
    published_keys: list[str] = field(default_factory=list)


class Pipeline:
    """State for one lot: mask, backend, history, publish queue.

    Args:
        config: Lot configuration.
        backend: Detector; built from ``config.backend`` when omitted.
        mask: ROI mask; loaded from ``config.mask`` when omitted.
        publisher: Publish sink; built from ``config.publish`` when omitted.
        background_publish: Drain the queue on a worker thread. With
            ``False`` each cycle publishes inline, which keeps tests
            deterministic.
        sleep: Used for backend retry backoff.
    """

    def __init__(
        self,
        config: LotConfig,
        backend: DetectorBackend | None = None,
        mask: RoiMask | None = None,
        publisher: Publisher | None = None,
        *,
        background_publish: bool = True,
        sleep: Callable[[float], None] = time.sleep,
        retry_frames: int = 1,
    ):
        self.config = config
        self.backend = backend or build_backend(config.backend)
        self.mask = mask if mask is not None else load_mask_file(config.mask, config.mask_threshold)
        self.publisher = publisher or build_publisher(config)
        self.history = HistoryWriter(config.history)
        self.sleep = sleep
        self.gauges = Gauges()
        self._backend_lock = threading.Lock()
        self.retry_queue: deque[Frame] = deque(maxlen=retry_frames)
        spooled = PublishQueue.load_records(self.spool_path) if self.spool_path else []
        self.queue = PublishQueue(config.publish.queue_max, spooled)
        if spooled:
            log.info("reloaded %d unpublished records from %s", len(spooled), self.spool_path)
        self._background = background_publish
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._worker: threading.Thread | None = None
        if background_publish:
            self._worker = threading.Thread(target=self._publish_loop, name="publisher", daemon=True)
            self._worker.start()

    @property
    def spool_path(self) -> Path | None:
        h = self.config.history
        return h.with_name(h.name + ".pending") if h else None

    # -- detection ---------------------------------------------------------

    def _detect(self, image, image_id):
        attempts = self.config.backend.retries + 1
        for attempt in range(attempts):
            try:
                if self.backend.descriptor.serial:
                    with self._backend_lock:
                        return self.backend.detect(image, image_id)
                return self.backend.detect(image, image_id)
            except BackendError as exc:
                if not exc.retryable or attempt == attempts - 1:
                    raise
                log.warning("backend attempt %d/%d failed: %s", attempt + 1, attempts, exc)
                self.sleep(self.config.backend.retry_backoff_s * (2**attempt))
        raise AssertionError("unreachable")

    def count(self, frame: Frame) -> CountResult:
        cfg = self.config
        if cfg.roi_method == "pre":
            dets = self._detect(apply_pre_mask(frame.image, self.mask), frame.image_id)
            return count_all(dets, cfg.allowed_classes)
        dets = self._detect(frame.image, frame.image_id)
        return filter_detections(dets, self.mask, cfg.allowed_classes, frame.image.shape)

    def process(self, frame: Frame) -> OccupancyRecord:
        """Detect, count and record one frame; the record is in history and queued on return."""
        result = self.count(frame)
        rec = occupancy(result, self.config.capacity, self.config.lot_id, frame.captured_at, self.backend.descriptor.model_id)
        self.history.append(rec)
        self.gauges.records += 1
        self.queue.push(rec)
        return rec

    # -- cycle -------------------------------------------------------------

    def run_once(self, source) -> OccupancyRecord | None:
        """One capture/inference cycle. Returns the newest record, or None if skipped.

        Raises:
            SourceExhausted: replay source finished and nothing is pending.
        """
        self.gauges.cycles += 1
        frames: list[Frame] = []
        if self.retry_queue:
            frames.append(self.retry_queue.popleft())
        try:
            frames.append(source.capture())
        except SourceExhausted:
            if not frames:
                raise
        except CaptureError as exc:
            log.warning("capture failed, skipping cycle: %s", exc)
            self.gauges.skipped += 1

        latest = None
        for frame in frames:
            try:
                latest = self.process(frame)
            except BackendError as exc:
                log.error("backend failed for %s, queued for retry: %s", frame.image_id, exc)
                self.gauges.backend_failures += 1
                self.retry_queue.append(frame)
        self._after_enqueue()
        return latest

    # -- publishing --------------------------------------------------------

    def _after_enqueue(self) -> None:
        if self._background:
            self._wake.set()
        else:
            self.drain()
        self._update_queue_gauges()

    def _update_queue_gauges(self) -> None:
        self.gauges.queue_depth = len(self.queue)
        self.gauges.queue_dropped = self.queue.dropped

    def drain(self) -> bool:
        """Publish queued records in order until empty or one fails. True if emptied."""
        while True:
            rec = self.queue.peek()
            if rec is None:
                self._update_queue_gauges()
                return True
            try:
                ack = self.publisher.publish(rec)
            except PublishError as exc:
                self.gauges.publish_failures += 1
                log.warning("publish of %s failed (kept queued): %s", rec.key, exc)
                self._update_queue_gauges()
                return False
            self.queue.remove(rec)
            self.gauges.published += 1
            self.gauges.published_keys.append(ack.key)
            self.gauges.last_ack_latency_ms = ack.latency_ms

    def _publish_loop(self) -> None:
        while not self._stop.is_set():
            self._wake.wait()
            self._wake.clear()
            if self._stop.is_set():
                break
            if not self.drain():
                # back off, then try again even without new records
                if self._stop.wait(self.config.publish.retry_s):
                    break
                self._wake.set()

    def shutdown(self) -> None:
        """Stop the worker, flush the queue, spool anything still unpublished."""
        if self._worker is not None:
            self._stop.set()
            self._wake.set()
            self._worker.join()
            self._worker = None
        self.drain()
        if self.spool_path is None:
            return
        if len(self.queue):
            self.queue.save(self.spool_path)
            log.warning("%d unpublished records spooled to %s", len(self.queue), self.spool_path)
        elif self.spool_path.exists():
            self.spool_path.unlink()


def run_pipeline_once(config: LotConfig, source, **kwargs) -> OccupancyRecord | None:
    pipe = Pipeline(config, background_publish=False, **kwargs)
    try:
        return pipe.run_once(source)
    finally:
        pipe.shutdown()


class TickScheduler:
    """Fixed-interval ticks without overlap.

    A cycle starts every ``interval_s``. If a cycle overruns, the ticks it
    covered are skipped and the next cycle starts as soon as it ends.
    """

    def __init__(
        self,
        interval_s: float,
        clock: Callable[[], float] = time.monotonic,
        wait: Callable[[float], object] | None = None,
    ):
        self.interval_s = interval_s
        self.clock = clock
        self._wait = wait
        self.starts: list[float] = []

    def run(self, job: Callable[[], object], stop: threading.Event, max_cycles: int | None = None) -> int:
        wait = self._wait or stop.wait
        cycles = 0
        next_start = self.clock()
        while not stop.is_set():
            delay = next_start - self.clock()
            if delay > 0:
                wait(delay)
                continue
            start = self.clock()
            self.starts.append(start)
            try:
                job()
            except SourceExhausted:
                log.info("source exhausted after %d cycles", cycles + 1)
                break
            cycles += 1
            if max_cycles is not None and cycles >= max_cycles:
                break
            next_start = max(start + self.interval_s, self.clock())
        return cycles


@contextlib.contextmanager
def _stop_on_signals(stop: threading.Event):
    if threading.current_thread() is not threading.main_thread():
        yield
        return
    previous = {}

    def handler(signum, _frame):
        log.info("received signal %d, shutting down", signum)
        stop.set()

    for sig in (signal.SIGINT, signal.SIGTERM):
        previous[sig] = signal.signal(sig, handler)
    try:
        yield
    finally:
        for sig, h in previous.items():
            signal.signal(sig, h)


def serve(
    config: LotConfig,
    *,
    source=None,
    pipeline: Pipeline | None = None,
    max_cycles: int | None = None,
    stop: threading.Event | None = None,
    scheduler: TickScheduler | None = None,
) -> Gauges:
    """Run the capture loop until stopped, the source is exhausted or ``max_cycles``."""
    stop = stop or threading.Event()
    pipe = pipeline or Pipeline(config)
    src = source or build_source(config)
    sched = scheduler or TickScheduler(config.interval_s)
    log.info("serving lot %s every %.1fs (%s mode, %s ROI)", config.lot_id, config.interval_s, config.mode, config.roi_method)
    try:
        with _stop_on_signals(stop):
            sched.run(lambda: pipe.run_once(src), stop, max_cycles)
    finally:
        pipe.shutdown()
    return pipe.gauges
