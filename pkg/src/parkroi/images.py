"""Image file I/O (PNG/JPEG) on top of Pillow."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .domain import ImageBuffer, ValidationError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def _to_buffer(img: Image.Image, grayscale_ok: bool) -> ImageBuffer:
    if img.mode in ("L", "1", "I;16", "I") and grayscale_ok:
        img = img.convert("L")
    elif img.mode == "LA" and grayscale_ok:
        img = img.convert("L")
    else:
        img = img.convert("RGB")
    return ImageBuffer(np.asarray(img))


def load_image(path: str | Path, *, grayscale_ok: bool = False) -> ImageBuffer:
    """Read an image file. Colour output unless ``grayscale_ok`` and the file is gray."""
    try:
        with Image.open(path) as img:
            img.load()
            return _to_buffer(img, grayscale_ok)
    except (OSError, Image.DecompressionBombError) as exc:
        raise ValidationError(f"cannot read image {path}: {exc}") from exc


def decode_image(data: bytes) -> ImageBuffer:
    with Image.open(io.BytesIO(data)) as img:
        img.load()
        return _to_buffer(img, grayscale_ok=False)


def _to_pil(image: ImageBuffer) -> Image.Image:
    if image.channels == 1:
        return Image.fromarray(image.pixels[:, :, 0])
    return Image.fromarray(image.pixels)


def save_image(image: ImageBuffer, path: str | Path) -> None:
    _to_pil(image).save(path)


def encode_jpeg(image: ImageBuffer, quality: int = 90) -> bytes:
    buf = io.BytesIO()
    _to_pil(image).save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def encode_png(image: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    _to_pil(image).save(buf, format="PNG")
    return buf.getvalue()


def list_images(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
