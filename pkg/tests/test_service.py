import json
import os
import random
import signal
import threading

import pytest

from conftest import RecordingServer, ack_handler
from oracles import brute_force_in_roi
from parkroi.backends import BackendDescriptor, RetryableBackendError, SyntheticBackend
from parkroi.config import LotConfig, PublishConfig, config_from_mapping, load_config, with_overrides
from parkroi.domain import OccupancyRecord, ValidationError
from parkroi.images import save_image
from parkroi.publish import (
    MAX_EDGE_PAYLOAD_BYTES,
    Acknowledgment,
    HttpPublisher,
    PublishError,
    PublishQueue,
    encode_payload,
)
from parkroi.service import Pipeline, TickScheduler, read_history, run_pipeline_once, serve
from parkroi.sources import CaptureError, DirectorySource, Frame, SourceExhausted
from parkroi.synthetic import SceneSpec, place_distractors, synthetic_scene


class ListSource:
    def __init__(self, frames):
        self.frames = list(frames)

    def capture(self):
        if not self.frames:
            raise SourceExhausted("done")
        return self.frames.pop(0)


class RecordingPublisher:
    def __init__(self, fail_first=0):
        self.sent = []
        self.fail_first = fail_first

    def publish(self, record):
        if self.fail_first:
            self.fail_first -= 1
            raise PublishError("sink down")
        self.sent.append(record)
        return Acknowledgment(record.key, 200, 1.0)


class DownBackend:
    descriptor = BackendDescriptor("down", "none")

    def __init__(self):
        self.calls = 0

    def detect(self, image, image_id=None):
        self.calls += 1
        raise RetryableBackendError("connection refused")


def make_config(tmp_path, **kw):
    return LotConfig("lot-a", 16, tmp_path / "mask.png", history=tmp_path / "history.jsonl", **kw)


def scene_frames(layout, n, t0=1000.0, distractors=0):
    out = []
    for i in range(n):
        occupied = frozenset(random.Random(i).sample(range(16), 8))
        spec = SceneSpec(layout, occupied, place_distractors(layout, distractors, random.Random(i)), seed=i)
        out.append((Frame(f"f{i}.png", synthetic_scene(spec).image, t0 + i), spec))
    return out


def pipeline(tmp_path, layout, backend=None, publisher=None, **kw):
    cfg = make_config(tmp_path, **kw.pop("cfg", {}))
    return Pipeline(
        cfg,
        backend or SyntheticBackend(),
        layout.roi,
        publisher or RecordingPublisher(),
        background_publish=False,
        sleep=lambda s: None,
        **kw,
    )


def test_oracle_end_to_end(tmp_path, layout):
    (frame, _), = scene_frames(layout, 1)
    pipe = pipeline(tmp_path, layout)
    rec = pipe.process(frame)
    assert (rec.vehicles, rec.free, rec.capacity) == (8, 8, 16)
    assert rec.model_id == "synthetic-oracle"


def test_distractors_are_filtered(tmp_path, layout):
    (frame, spec), = scene_frames(layout, 1, distractors=5)
    scene = synthetic_scene(spec)
    flat = layout.mask_image().pixels[:, :, 0].ravel().tolist()
    boxes = [(d.class_label, *map(int, d.box.as_tuple())) for d in scene.ground_truth]
    assert brute_force_in_roi(flat, layout.width, layout.height, boxes, {"car", "truck"}) == (13, 8)
    assert pipeline(tmp_path, layout).process(frame).vehicles == 8


def test_pre_and_post_bounded_by_detections(tmp_path, layout):
    for frame, spec in scene_frames(layout, 5, distractors=3):
        n_allowed = len(synthetic_scene(spec).ground_truth)
        for method in ("pre", "post"):
            pipe = pipeline(tmp_path, layout, cfg={"roi_method": method})
            assert pipe.count(frame).in_roi_count <= n_allowed


def test_backend_down_queues_one_retry(tmp_path, layout):
    publisher = RecordingPublisher()
    backend = DownBackend()
    pipe = pipeline(tmp_path, layout, backend=backend, publisher=publisher)
    frames = [f for f, _ in scene_frames(layout, 2)]
    assert pipe.run_once(ListSource(frames[:1])) is None
    assert publisher.sent == []
    assert len(pipe.retry_queue) == 1
    assert backend.calls == pipe.config.backend.retries + 1
    assert not (tmp_path / "history.jsonl").exists()
    # the next failing cycle keeps only the newest frame
    pipe.run_once(ListSource(frames[1:]))
    assert [f.image_id for f in pipe.retry_queue] == ["f1.png"]
    assert pipe.gauges.backend_failures == 3


def test_retry_entry_is_processed_when_backend_recovers(tmp_path, layout):
    pipe = pipeline(tmp_path, layout, backend=DownBackend())
    frames = [f for f, _ in scene_frames(layout, 2)]
    pipe.run_once(ListSource(frames[:1]))
    pipe.backend = SyntheticBackend()
    pipe.run_once(ListSource(frames[1:]))
    assert [r.timestamp for r in read_history(tmp_path / "history.jsonl")] == [1000.0, 1001.0]
    assert not pipe.retry_queue


def test_capture_failure_skips_cycle(tmp_path, layout):
    class Broken:
        def capture(self):
            raise CaptureError("camera busy")

    pipe = pipeline(tmp_path, layout)
    assert pipe.run_once(Broken()) is None
    assert pipe.gauges.skipped == 1


def test_history_written_before_publish(tmp_path, layout):
    seen = []

    class CheckingPublisher(RecordingPublisher):
        def publish(self, record):
            seen.append([r.key for r in read_history(tmp_path / "history.jsonl")])
            return super().publish(record)

    pipe = pipeline(tmp_path, layout, publisher=CheckingPublisher())
    frame = scene_frames(layout, 1)[0][0]
    rec = pipe.run_once(ListSource([frame]))
    assert seen == [[rec.key]]


def test_scheduler_does_not_overlap():
    t = [0.0]
    sched = TickScheduler(1.0, clock=lambda: t[0], wait=lambda d: t.__setitem__(0, t[0] + d))

    def job():
        t[0] += 2.5

    assert sched.run(job, threading.Event(), max_cycles=3) == 3
    assert sched.starts == [0.0, 2.5, 5.0]


def test_scheduler_waits_for_interval():
    t = [0.0]
    sched = TickScheduler(300.0, clock=lambda: t[0], wait=lambda d: t.__setitem__(0, t[0] + d))
    sched.run(lambda: t.__setitem__(0, t[0] + 4.0), threading.Event(), max_cycles=3)
    assert sched.starts == [0.0, 300.0, 600.0]


def test_three_ticks_three_history_lines(tmp_path, layout):
    frames = [f for f, _ in scene_frames(layout, 3)]
    cfg = make_config(tmp_path, interval_s=0.01)
    pipe = Pipeline(cfg, SyntheticBackend(), layout.roi, RecordingPublisher(), background_publish=True)
    gauges = serve(cfg, source=ListSource(frames), pipeline=pipe)
    hist = read_history(tmp_path / "history.jsonl")
    assert len(hist) == 3
    ts = [r.timestamp for r in hist]
    assert ts == sorted(ts) and len(set(ts)) == 3
    assert gauges.published == 3
    assert gauges.published_keys == [r.key for r in hist]


def test_history_replay_reproduces_published(tmp_path, layout):
    publisher = RecordingPublisher()
    pipe = pipeline(tmp_path, layout, publisher=publisher)
    src = ListSource([f for f, _ in scene_frames(layout, 4)])
    for _ in range(4):
        pipe.run_once(src)
    assert read_history(tmp_path / "history.jsonl") == publisher.sent


def test_shutdown_flushes_queue(tmp_path, layout):
    publisher = RecordingPublisher(fail_first=1)
    cfg = make_config(tmp_path, publish=PublishConfig(retry_s=60))
    pipe = Pipeline(cfg, SyntheticBackend(), layout.roi, publisher, background_publish=True)
    src = ListSource([f for f, _ in scene_frames(layout, 3)])
    for _ in range(3):
        pipe.run_once(src)
    pipe.shutdown()
    assert len(publisher.sent) == 3
    assert len(pipe.queue) == 0
    assert not pipe.spool_path.exists()


def test_signal_triggers_flush(tmp_path, layout):
    frames = [f for f, _ in scene_frames(layout, 5)]

    class SignallingSource(ListSource):
        def capture(self):
            if len(self.frames) == 3:
                os.kill(os.getpid(), signal.SIGTERM)
            return super().capture()

    publisher = RecordingPublisher(fail_first=1)
    cfg = make_config(tmp_path, interval_s=0.01, publish=PublishConfig(retry_s=60))
    pipe = Pipeline(cfg, SyntheticBackend(), layout.roi, publisher, background_publish=True)
    serve(cfg, source=SignallingSource(frames), pipeline=pipe)
    hist = read_history(tmp_path / "history.jsonl")
    assert len(hist) == 3
    assert publisher.sent == hist


def test_unpublished_records_are_spooled_and_reloaded(tmp_path, layout):
    frames = [f for f, _ in scene_frames(layout, 2)]
    pipe = pipeline(tmp_path, layout, publisher=RecordingPublisher(fail_first=100))
    src = ListSource(frames)
    pipe.run_once(src)
    pipe.run_once(src)
    pipe.shutdown()
    assert len(PublishQueue.load_records(pipe.spool_path)) == 2
    healthy = RecordingPublisher()
    again = pipeline(tmp_path, layout, publisher=healthy)
    again.shutdown()
    assert [r.timestamp for r in healthy.sent] == [1000.0, 1001.0]
    assert not again.spool_path.exists()


def test_queue_drops_oldest():
    q = PublishQueue(maxlen=3)
    recs = [OccupancyRecord("l", float(i), 16, 1, 15, "m") for i in range(5)]
    for r in recs:
        q.push(r)
    assert q.snapshot() == recs[2:]
    assert q.dropped == 2


def test_persistent_failure_exposes_gauges(tmp_path, layout):
    cfg = {"publish": PublishConfig(queue_max=2)}
    pipe = pipeline(tmp_path, layout, publisher=RecordingPublisher(fail_first=100), cfg=cfg)
    src = ListSource([f for f, _ in scene_frames(layout, 4)])
    for _ in range(4):
        pipe.run_once(src)
    assert pipe.gauges.queue_depth == 2
    assert pipe.gauges.queue_dropped == 2
    assert pipe.gauges.publish_failures == 4


def rec(ts=1.0):
    return OccupancyRecord("lot-a", ts, 16, 8, 8, "yolov8n")


def test_http_publish_acknowledged():
    with RecordingServer(ack_handler(MAX_EDGE_PAYLOAD_BYTES)) as srv:
        ack = HttpPublisher(srv.url, token="s3cret").publish(rec())
        _, headers, body = srv.requests[0]
    assert ack.key == rec().key and ack.status_code == 200 and ack.latency_ms >= 0
    assert headers["Authorization"] == "Bearer s3cret"
    assert json.loads(body) == rec().to_dict()


def test_malformed_ack_keeps_record_queued(tmp_path, layout):
    with RecordingServer(ack_handler(malformed=True)) as srv:
        pipe = pipeline(tmp_path, layout, publisher=HttpPublisher(srv.url, timeout_s=5))
        pipe.run_once(ListSource([scene_frames(layout, 1)[0][0]]))
    assert len(pipe.queue) == 1
    assert pipe.gauges.published == 0


def test_edge_payload_is_small():
    payload = encode_payload(OccupancyRecord("x" * 200, 1.7e9, 10_000, 5_000, 5_000, "m" * 200))
    assert len(payload) <= MAX_EDGE_PAYLOAD_BYTES
    with pytest.raises(PublishError):
        HttpPublisher("http://127.0.0.1:9", edge_mode=True).publish(OccupancyRecord("x" * 2000, 1.0, 1, 0, 1, "m"))


def test_unreachable_sink_is_retryable():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    with pytest.raises(PublishError) as err:
        HttpPublisher(f"http://127.0.0.1:{port}", timeout_s=1).publish(rec())
    assert err.value.retryable


def test_directory_source_replays_in_order(tmp_path, layout):
    frames = scene_frames(layout, 3)
    for f, _ in reversed(frames):
        save_image(f.image, tmp_path / f.image_id)
    src = DirectorySource(tmp_path)
    got = [src.capture().image_id for _ in range(3)]
    assert got == ["f0.png", "f1.png", "f2.png"]
    with pytest.raises(SourceExhausted):
        src.capture()


def test_run_pipeline_once_from_config(tmp_path, layout):
    save_image(layout.mask_image(), tmp_path / "mask.png")
    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    save_image(scene_frames(layout, 1)[0][0].image, frames_dir / "a.png")
    cfg = load_config(_write_yaml(tmp_path), env={})
    rec = run_pipeline_once(cfg, DirectorySource(cfg.source.path), publisher=RecordingPublisher())
    assert (rec.vehicles, rec.free) == (8, 8)


def _write_yaml(tmp_path):
    path = tmp_path / "lot.yaml"
    path.write_text(
        "lot_id: lot-a\ncapacity: 16\nmask: mask.png\ninterval_s: 5\nhistory: history.jsonl\n"
        "backend: {kind: synthetic}\nsource: {kind: directory, path: frames}\n"
        "publish: {endpoint: 'http://sink/api', queue_max: 50}\n"
    )
    return path


def test_config_loading_and_env_overrides(tmp_path):
    path = _write_yaml(tmp_path)
    cfg = load_config(path, env={"PARKROI_PUBLISH_TOKEN": "tok", "PARKROI_PUBLISH_ENDPOINT": "http://other/api"})
    assert cfg.mask == tmp_path / "mask.png"
    assert cfg.source.path == tmp_path / "frames"
    assert cfg.publish.endpoint == "http://other/api" and cfg.publish.token == "tok"
    assert cfg.publish.queue_max == 50
    assert cfg.mode == "edge"
    assert with_overrides(cfg, roi_method="pre").roi_method == "pre"


@pytest.mark.parametrize(
    "data",
    [
        {"capacity": 16, "mask": "m.png"},
        {"lot_id": "a", "capacity": 0, "mask": "m.png"},
        {"lot_id": "a", "capacity": 16, "mask": "m.png", "interval_s": 0},
        {"lot_id": "a", "capacity": 16, "mask": "m.png", "roi_method": "both"},
        {"lot_id": "a", "capacity": 16, "mask": "m.png", "backend": {"kind": "remote"}},
        {"lot_id": "a", "capacity": 16, "mask": "m.png", "backend": {"kind": "synthetic", "colour": 1}},
    ],
)
def test_config_errors(data):
    with pytest.raises(ValidationError):
        config_from_mapping(data, env={})


def test_remote_backend_config_is_cloud_mode():
    cfg = config_from_mapping(
        {"lot_id": "a", "capacity": 4, "mask": "m.png", "backend": {"kind": "remote"}},
        env={"PARKROI_BACKEND_ENDPOINT": "http://gpu:8000/detect"},
    )
    assert cfg.mode == "cloud"
    assert cfg.backend.endpoint == "http://gpu:8000/detect"
