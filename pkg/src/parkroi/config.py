"""Lot configuration file (YAML).

Example::

    lot_id: campus-lot-a
    capacity: 16
    mask: mask.png              # black = monitored region
    interval_s: 300
    roi_method: post            # pre | post
    allowed_classes: [car, truck]
    history: history.jsonl
    backend:
      kind: synthetic           # synthetic | fixture | remote | ultralytics
      fixture: detections.jsonl # kind=fixture
      endpoint: http://gpu-box:8000/detect   # kind=remote
      weights: yolov8n.pt       # kind=ultralytics
      timeout_s: 30
      retries: 2
    source:
      kind: directory           # directory | command
      path: frames/
      once: true                # stop serving after the last file
      command: "libcamera-still -o {output}"  # kind=command
    publish:
      endpoint: https://iot.example/api/occupancy
      timeout_s: 10
      queue_max: 1000

Relative paths are resolved against the config file's directory.
Environment overrides: ``PARKROI_PUBLISH_ENDPOINT``, ``PARKROI_PUBLISH_TOKEN``,
``PARKROI_BACKEND_ENDPOINT``, ``PARKROI_BACKEND_TOKEN``.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .domain import ValidationError
from .roi import DEFAULT_CLASSES, DEFAULT_THRESHOLD

BACKEND_KINDS = ("synthetic", "fixture", "remote", "ultralytics")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "synthetic"
    fixture: Path | None = None
    endpoint: str | None = None
    token: str | None = None
    weights: str | None = None
    model_id: str | None = None
    timeout_s: float = 30.0
    retries: int = 2
    retry_backoff_s: float = 1.0
    vehicle_size: tuple[int, int] = (28, 36)
    min_confidence: float = 0.7

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValidationError(f"backend.kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.kind == "fixture" and self.fixture is None:
            raise ValidationError("backend.fixture is required for kind=fixture")
        if self.kind == "remote" and not self.endpoint:
            raise ValidationError("backend.endpoint is required for kind=remote")
        if self.kind == "ultralytics" and not self.weights:
            raise ValidationError("backend.weights is required for kind=ultralytics")
        if self.retries < 0:
            raise ValidationError("backend.retries must be >= 0")


@dataclass(frozen=True)
class SourceConfig:
    kind: str = "directory"
    path: Path | None = None
    once: bool = True
    command: str | None = None
    timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if self.kind == "directory" and self.path is None:
            raise ValidationError("source.path is required for kind=directory")
        if self.kind == "command" and not self.command:
            raise ValidationError("source.command is required for kind=command")
        if self.kind not in ("directory", "command"):
            raise ValidationError(f"source.kind must be directory or command, got {self.kind!r}")


@dataclass(frozen=True)
class PublishConfig:
    endpoint: str | None = None
    token: str | None = None
    timeout_s: float = 10.0
    queue_max: int = 1000
    retry_s: float = 5.0


@dataclass(frozen=True)
class LotConfig:
    lot_id: str
    capacity: int
    mask: Path
    interval_s: float = 300.0
    roi_method: str = "post"
    allowed_classes: frozenset[str] = DEFAULT_CLASSES
    mask_threshold: int = DEFAULT_THRESHOLD
    history: Path | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    source: SourceConfig | None = None
    publish: PublishConfig = field(default_factory=PublishConfig)

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValidationError("capacity must be > 0")
        if self.interval_s <= 0:
            raise ValidationError("interval_s must be > 0")
        if self.roi_method not in ("pre", "post"):
            raise ValidationError(f"roi_method must be 'pre' or 'post', got {self.roi_method!r}")
        if not self.lot_id:
            raise ValidationError("lot_id must not be empty")

    @property
    def mode(self) -> str:
        """``cloud`` when frames leave the device for inference, else ``edge``."""
        return "cloud" if self.backend.kind == "remote" else "edge"


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def config_from_mapping(data: Mapping, base_dir: str | Path = ".", env: Mapping[str, str] | None = None) -> LotConfig:
    env = os.environ if env is None else env
    base = Path(base_dir)
    try:
        b = dict(data.get("backend") or {})
        if "fixture" in b:
            b["fixture"] = _path(base, b["fixture"])
        if "vehicle_size" in b:
            b["vehicle_size"] = tuple(int(v) for v in b["vehicle_size"])
        backend_raw = {**b}
        if env.get("PARKROI_BACKEND_ENDPOINT"):
            backend_raw["endpoint"] = env["PARKROI_BACKEND_ENDPOINT"]
        if env.get("PARKROI_BACKEND_TOKEN"):
            backend_raw["token"] = env["PARKROI_BACKEND_TOKEN"]
        backend = BackendConfig(**backend_raw)

        source = None
        if data.get("source"):
            s = dict(data["source"])
            if "path" in s:
                s["path"] = _path(base, s["path"])
            source = SourceConfig(**s)

        p = dict(data.get("publish") or {})
        if env.get("PARKROI_PUBLISH_ENDPOINT"):
            p["endpoint"] = env["PARKROI_PUBLISH_ENDPOINT"]
        if env.get("PARKROI_PUBLISH_TOKEN"):
            p["token"] = env["PARKROI_PUBLISH_TOKEN"]
        publish = PublishConfig(**p)

        return LotConfig(
            lot_id=str(data["lot_id"]),
            capacity=int(data["capacity"]),
            mask=_path(base, data["mask"]),
            interval_s=float(data.get("interval_s", 300.0)),
            roi_method=str(data.get("roi_method", "post")),
            allowed_classes=frozenset(data.get("allowed_classes") or DEFAULT_CLASSES),
            mask_threshold=int(data.get("mask_threshold", DEFAULT_THRESHOLD)),
            history=_path(base, data.get("history")),
            backend=backend,
            source=source,
            publish=publish,
        )
    except KeyError as exc:
        raise ValidationError(f"config is missing required key {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValidationError(f"invalid config: {exc}") from None


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> LotConfig:
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return config_from_mapping(data, path.parent, env)


def with_overrides(config: LotConfig, **changes) -> LotConfig:
    return replace(config, **changes)
