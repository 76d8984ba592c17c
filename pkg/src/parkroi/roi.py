"""Region-of-interest masking for detector input and output.

Two strategies share one mask:

* pre-masking paints every pixel outside the ROI mid-gray before inference,
  so the detector never sees that context;
* post-filtering leaves the image alone and keeps only detections whose box
  centre lands on an ROI pixel of the mask.
"""

from __future__ import annotations

from collections.abc import Iterable
from pathlib import Path

import numpy as np

from .domain import CountResult, Detection, ImageBuffer, RoiMask, ValidationError, round_half_down

GRAY_FILL = (128, 128, 128)
DEFAULT_THRESHOLD = 128
DEFAULT_CLASSES = frozenset({"car", "truck"})


def luminance(image: ImageBuffer) -> np.ndarray:
    """Integer luminance per pixel, ``round(0.299 R + 0.587 G + 0.114 B)``."""
    px = image.pixels
    if image.channels == 1:
        return px[:, :, 0].astype(np.int32)
    rgb = px.astype(np.float64)
    lum = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    # half-up; the weights sum to 1 so gray inputs land within a few ulps of an integer
    return np.floor(lum + 0.5 + 1e-9).astype(np.int32)


def load_mask(image: ImageBuffer, threshold: int = DEFAULT_THRESHOLD) -> RoiMask:
    """Binarize a mask image: dark pixels (luminance below threshold) are inside the ROI."""
    if not 0 <= threshold <= 255:
        raise ValidationError(f"threshold must be in [0, 255], got {threshold}")
    bits = luminance(image) < threshold
    if not bits.any():
        raise ValidationError("empty ROI")
    return RoiMask(bits)


def load_mask_file(path: str | Path, threshold: int = DEFAULT_THRESHOLD) -> RoiMask:
    from .images import load_image

    return load_mask(load_image(path, grayscale_ok=True), threshold)


def mask_to_image(mask: RoiMask) -> ImageBuffer:
    """Render a mask back to the on-disk convention (black ROI on white)."""
    return ImageBuffer(np.where(mask.bits, 0, 255).astype(np.uint8))


def _check_shape(image: ImageBuffer, mask: RoiMask) -> None:
    if image.shape != mask.shape:
        raise ValidationError(
            f"image is {image.width}x{image.height} but mask is {mask.width}x{mask.height}"
        )


def apply_pre_mask(image: ImageBuffer, mask: RoiMask) -> ImageBuffer:
    """Return a copy of ``image`` with every non-ROI pixel set to (128, 128, 128)."""
    _check_shape(image, mask)
    if image.channels != 3:
        raise ValidationError(f"pre-mask needs a 3-channel image, got {image.channels}")
    out = image.pixels.copy()
    out[~mask.bits] = GRAY_FILL
    return ImageBuffer(out)


def point_in_roi(mask: RoiMask, x: int, y: int) -> bool:
    if x < 0 or y < 0 or x >= mask.width or y >= mask.height:
        return False
    return bool(mask.bits[y, x])


def _center_on_mask(det: Detection, mask: RoiMask, image_size: tuple[int, int] | None) -> tuple[int, int]:
    if image_size is None or tuple(image_size) == mask.shape:
        return det.box.center()
    img_w, img_h = image_size
    sx = mask.width / img_w
    sy = mask.height / img_h
    b = det.box
    return (round_half_down((b.x1 + b.x2) / 2 * sx), round_half_down((b.y1 + b.y2) / 2 * sy))


def filter_detections(
    detections: Iterable[Detection],
    mask: RoiMask,
    allowed_classes: Iterable[str] = DEFAULT_CLASSES,
    image_size: tuple[int, int] | None = None,
) -> CountResult:
    """Count allowed-class detections whose box centre falls inside the ROI.

    Args:
        detections: Detector output in image pixel coordinates.
        mask: ROI mask.
        allowed_classes: Class labels that count as vehicles.
        image_size: ``(width, height)`` of the image the boxes refer to. When
            it differs from the mask, centres are rescaled to mask coordinates.

    Returns:
        CountResult where ``total_detections`` counts every allowed-class
        detection and ``in_roi_count`` only those on ROI pixels.
    """
    allowed = frozenset(allowed_classes)
    total = 0
    per_class: dict[str, int] = {}
    for det in detections:
        if det.class_label not in allowed:
            continue
        total += 1
        x, y = _center_on_mask(det, mask, image_size)
        if point_in_roi(mask, x, y):
            per_class[det.class_label] = per_class.get(det.class_label, 0) + 1
    return CountResult(total, sum(per_class.values()), per_class)


def count_all(detections: Iterable[Detection], allowed_classes: Iterable[str] = DEFAULT_CLASSES) -> CountResult:
    """Count every allowed-class detection (used after pre-masking, where the
    detector only saw the ROI)."""
    allowed = frozenset(allowed_classes)
    per_class: dict[str, int] = {}
    for det in detections:
        if det.class_label in allowed:
            per_class[det.class_label] = per_class.get(det.class_label, 0) + 1
    n = sum(per_class.values())
    return CountResult(n, n, per_class)
