"""Image sources for the capture loop."""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from .domain import ImageBuffer, ValidationError
from .images import list_images, load_image

log = logging.getLogger(__name__)


class CaptureError(RuntimeError):
    """No frame this cycle; the cycle is skipped."""


class SourceExhausted(CaptureError):
    """A replay source has delivered every frame."""


@dataclass(frozen=True, eq=False)
class Frame:
    image_id: str
    image: ImageBuffer
    captured_at: float


class DirectorySource:
    """Delivers image files from a directory in name order, each once.

    With ``once=True`` the source ends after the last file (replay). With
    ``once=False`` it keeps watching the directory; a cycle with no new file
    raises :class:`CaptureError`.
    """

    def __init__(self, path: str | Path, once: bool = True, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.once = once
        self.clock = clock
        self._seen: set[str] = set()

    def capture(self) -> Frame:
        if not self.path.is_dir():
            raise CaptureError(f"{self.path} is not a directory")
        for p in list_images(self.path):
            if p.name in self._seen:
                continue
            self._seen.add(p.name)
            try:
                image = load_image(p)
            except ValidationError as exc:
                raise CaptureError(str(exc)) from exc
            return Frame(p.name, image, self.clock())
        if self.once:
            raise SourceExhausted(f"no more images in {self.path}")
        raise CaptureError(f"no new image in {self.path}")


class CommandSource:
    """Runs a capture command that writes a still image to ``{output}``."""

    def __init__(self, command: str, timeout_s: float = 60.0, clock: Callable[[], float] = time.time):
        if "{output}" not in command:
            raise ValidationError("capture command must contain an {output} placeholder")
        self.command = command
        self.timeout_s = timeout_s
        self.clock = clock
        self._n = 0

    def capture(self) -> Frame:
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "frame.png"
            argv = [a.replace("{output}", str(out)) for a in shlex.split(self.command)]
            ts = self.clock()
            try:
                subprocess.run(argv, check=True, timeout=self.timeout_s, capture_output=True)
                image = load_image(out)
            except (subprocess.SubprocessError, OSError, ValidationError) as exc:
                raise CaptureError(f"capture command failed: {exc}") from exc
        self._n += 1
        return Frame(f"capture-{int(ts)}-{self._n}", image, ts)
