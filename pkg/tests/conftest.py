from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from parkroi.domain import BoundingBox, Detection
from parkroi.synthetic import default_layout


class RecordingServer:
    """Tiny HTTP server for backend and publish tests.

    ``handler(path, headers, body) -> (status, body_bytes)`` decides each
    response; every request is recorded.
    """

    def __init__(self, handler):
        self.requests: list[tuple[str, dict, bytes]] = []
        outer = self

        class _H(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(n)
                headers = dict(self.headers.items())
                outer.requests.append((self.path, headers, body))
                status, out = handler(self.path, headers, body)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), _H)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def ack_handler(max_bytes: int | None = None, malformed: bool = False):
    """Publish sink: acknowledges records, rejecting payloads over ``max_bytes``."""

    def handle(path, headers, body):
        if max_bytes is not None and len(body) > max_bytes:
            return 413, b'{"error": "payload too large"}'
        if malformed:
            return 200, b"not json"
        rec = json.loads(body)
        key = f"{rec['lot_id']}@{rec['timestamp']!r}"
        return 200, json.dumps({"status": "ok", "key": key}).encode()

    return handle


@pytest.fixture
def layout():
    return default_layout()


def thirteen_car_detections(layout):
    """Thirteen car detections on the scale-2 default lot; eight have centres in the ROI.

    Five lie outside the ROI: two on the street, one left and one right of the
    lot, and one behind the back row whose centre sits above the painted region.
    """
    vw, vh = layout.vehicle_size
    dets = []
    for idx in (0, 2, 5, 7, 8, 9, 12, 15):
        s = layout.spots[idx]
        x1 = int(s.x1) + (int(s.x2 - s.x1) - vw) // 2
        y1 = int(s.y1) + (int(s.y2 - s.y1) - vh) // 2
        dets.append(Detection("car", 0.8, BoundingBox(x1, y1, x1 + vw, y1 + vh)))
    st = layout.street
    outside = [
        BoundingBox(20, int(st.y1) + 10, 20 + vw, int(st.y1) + 10 + vh),
        BoundingBox(400, int(st.y1) + 30, 400 + vw, int(st.y1) + 30 + vh),
        BoundingBox(2, 300, 2 + vw, 300 + vh),
        BoundingBox(layout.width - vw - 2, 260, layout.width - 2, 260 + vh),
        BoundingBox(300, int(layout.spots[0].y1) - 40, 300 + vw, int(layout.spots[0].y1) - 40 + vh),
    ]
    dets.extend(Detection("car", 0.6, b) for b in outside)
    return dets


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
