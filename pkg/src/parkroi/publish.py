"""Publishing occupancy records to an IoT endpoint.

Only the numeric record crosses the network; the payload type has no image
field. In edge mode the publisher also refuses payloads over 1 KiB as a
guard against accidentally shipping pixels.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from .domain import OccupancyRecord

log = logging.getLogger(__name__)

MAX_EDGE_PAYLOAD_BYTES = 1024


class PublishError(RuntimeError):
    def __init__(self, message: str, *, retryable: bool = True, status_code: int | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.status_code = status_code


@dataclass(frozen=True)
class Acknowledgment:
    key: str
    status_code: int
    latency_ms: float


class Publisher(Protocol):
    def publish(self, record: OccupancyRecord) -> Acknowledgment:
        ...


def encode_payload(record: OccupancyRecord) -> bytes:
    return json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_ack(body: bytes, record: OccupancyRecord) -> None:
    """Sinks answer ``{"status": "ok", "key": "<lot_id>@<timestamp>"}``."""
    try:
        doc = json.loads(body)
    except ValueError:
        raise PublishError(f"malformed acknowledgment: {body[:100]!r}", retryable=True) from None
    if not isinstance(doc, dict) or doc.get("status") != "ok" or doc.get("key") != record.key:
        raise PublishError(f"malformed acknowledgment: {body[:100]!r}", retryable=True)


class HttpPublisher:
    def __init__(
        self,
        endpoint: str,
        *,
        token: str | None = None,
        timeout_s: float = 10.0,
        edge_mode: bool = True,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.token = token
        self.timeout_s = timeout_s
        self.edge_mode = edge_mode
        self._session = session or requests.Session()

    def publish(self, record: OccupancyRecord) -> Acknowledgment:
        import requests

        payload = encode_payload(record)
        if self.edge_mode and len(payload) > MAX_EDGE_PAYLOAD_BYTES:
            raise PublishError(f"payload of {len(payload)} bytes exceeds edge limit", retryable=False)
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        t0 = time.perf_counter()
        try:
            resp = self._session.post(self.endpoint, data=payload, headers=headers, timeout=self.timeout_s)
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise PublishError(f"publish to {self.endpoint} failed: {exc}") from exc
        latency = (time.perf_counter() - t0) * 1000.0
        if not 200 <= resp.status_code < 300:
            raise PublishError(f"sink returned HTTP {resp.status_code}", status_code=resp.status_code)
        parse_ack(resp.content, record)
        return Acknowledgment(record.key, resp.status_code, latency)


class LogPublisher:
    """Stand-in when no endpoint is configured: logs and acknowledges."""

    def publish(self, record: OccupancyRecord) -> Acknowledgment:
        log.info("occupancy %s", encode_payload(record).decode())
        return Acknowledgment(record.key, 0, 0.0)


class PublishQueue:
    """Bounded FIFO of unpublished records; when full the oldest is dropped."""

    def __init__(self, maxlen: int = 1000, records: Iterable[OccupancyRecord] = ()):
        if maxlen <= 0:
            raise ValueError("maxlen must be positive")
        self._q: deque[OccupancyRecord] = deque(maxlen=maxlen)
        self._lock = threading.Lock()
        self.dropped = 0
        for r in records:
            self.push(r)

    def push(self, record: OccupancyRecord) -> None:
        with self._lock:
            if len(self._q) == self._q.maxlen:
                lost = self._q[0]
                self.dropped += 1
                log.warning("publish queue full, dropping %s", lost.key)
            self._q.append(record)

    def peek(self) -> OccupancyRecord | None:
        with self._lock:
            return self._q[0] if self._q else None

    def remove(self, record: OccupancyRecord) -> None:
        with self._lock:
            if self._q and self._q[0] is record:
                self._q.popleft()
            else:
                try:
                    self._q.remove(record)
                except ValueError:
                    pass

    def snapshot(self) -> list[OccupancyRecord]:
        with self._lock:
            return list(self._q)

    def __len__(self) -> int:
        with self._lock:
            return len(self._q)

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in self.snapshot()]
        Path(path).write_text("".join(line + "\n" for line in lines))

    @staticmethod
    def load_records(path: str | Path) -> list[OccupancyRecord]:
        p = Path(path)
        if not p.exists():
            return []
        return [OccupancyRecord.from_dict(json.loads(line)) for line in p.read_text().splitlines() if line.strip()]
