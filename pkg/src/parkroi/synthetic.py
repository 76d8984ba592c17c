"""Synthetic parking-lot scenes with exact ground truth.

Vehicles are drawn as solid rectangles in a per-class colour on a gray,
noisy background. Because the colours never occur elsewhere in the scene,
:class:`parkroi.backends.SyntheticBackend` can recover every rectangle
exactly, which makes the generator its own detector oracle.

The default layout has two rows of eight spots. The ROI mask covers the
front row completely but only the lower part of the back row, the way a
hand-painted mask is kept tight to avoid picking up cars outside the lot.
Back-row vehicles therefore have their centre inside the ROI while most of
their body lies outside it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .domain import BoundingBox, Detection, ImageBuffer, RoiMask, ValidationError

VEHICLE_COLORS: dict[str, tuple[int, int, int]] = {
    "car": (200, 30, 30),
    "truck": (30, 30, 200),
    "person": (30, 180, 30),
}
LINE_COLOR = (235, 235, 235)
BACKGROUND_RANGE = (50, 110)


def _overlaps(a: BoundingBox, b: BoundingBox) -> bool:
    return a.x1 < b.x2 and b.x1 < a.x2 and a.y1 < b.y2 and b.y1 < a.y2


@dataclass(frozen=True)
class LotLayout:
    """Static geometry of a lot: image size, spots, ROI and vehicle size."""

    width: int
    height: int
    spots: tuple[BoundingBox, ...]
    roi: RoiMask
    vehicle_size: tuple[int, int]
    street: BoundingBox  # band where distractor vehicles may be placed
    jitter: int = 2

    def __post_init__(self) -> None:
        if self.roi.shape != (self.width, self.height):
            raise ValidationError("ROI mask does not match layout size")
        for i, a in enumerate(self.spots):
            for b in self.spots[i + 1 :]:
                if _overlaps(a, b):
                    raise ValidationError(f"overlapping spots: {a.as_tuple()} and {b.as_tuple()}")
        vw, vh = self.vehicle_size
        for s in self.spots:
            if s.x2 - s.x1 < vw + 2 * self.jitter or s.y2 - s.y1 < vh + 2 * self.jitter:
                raise ValidationError(f"spot {s.as_tuple()} too small for vehicle {self.vehicle_size}")

    @property
    def capacity(self) -> int:
        return len(self.spots)

    @property
    def lot_region(self) -> BoundingBox:
        return BoundingBox(
            min(s.x1 for s in self.spots),
            min(s.y1 for s in self.spots),
            max(s.x2 for s in self.spots),
            max(s.y2 for s in self.spots),
        )

    @property
    def nominal_vehicle_area(self) -> int:
        return self.vehicle_size[0] * self.vehicle_size[1]

    def mask_image(self) -> ImageBuffer:
        """Mask as it would be stored on disk: black ROI, white elsewhere."""
        return ImageBuffer(np.where(self.roi.bits, 0, 255).astype(np.uint8))


def default_layout(scale: int = 1) -> LotLayout:
    """Sixteen-spot lot on a ``384*scale`` x ``288*scale`` image."""
    if scale < 1:
        raise ValidationError("scale must be >= 1")
    s = scale
    spot_w, spot_h = 36 * s, 48 * s
    x0 = 48 * s
    back_y, front_y = 60 * s, 120 * s
    spots = tuple(
        BoundingBox(x0 + i * spot_w, y, x0 + (i + 1) * spot_w, y + spot_h)
        for y in (back_y, front_y)
        for i in range(8)
    )
    width, height = 384 * s, 288 * s
    bits = np.zeros((height, width), dtype=bool)
    # back row only covered from 45% of its height down
    roi_top = back_y + (45 * spot_h) // 100
    bits[roi_top : front_y + spot_h + 4 * s, x0 - 4 * s : x0 + 8 * spot_w + 4 * s] = True
    return LotLayout(
        width=width,
        height=height,
        spots=spots,
        roi=RoiMask(bits),
        vehicle_size=(28 * s, 36 * s),
        street=BoundingBox(0, 200 * s, width, 280 * s),
        jitter=2 * s,
    )


@dataclass(frozen=True)
class SceneSpec:
    layout: LotLayout
    occupied: frozenset[int] = frozenset()
    distractors: tuple[BoundingBox, ...] = ()
    seed: int = 0
    truck_fraction: float = 0.1
    extra_objects: tuple[tuple[str, BoundingBox], ...] = field(default=())


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: ImageBuffer
    ground_truth: tuple[Detection, ...]
    in_roi_count: int
    spec: SceneSpec

    @property
    def mask_image(self) -> ImageBuffer:
        return self.spec.layout.mask_image()


def _validate(spec: SceneSpec) -> None:
    layout = spec.layout
    bad = [i for i in spec.occupied if not 0 <= i < layout.capacity]
    if bad:
        raise ValidationError(f"occupied spot index out of range: {sorted(bad)}")
    lot = layout.lot_region
    boxes = list(spec.distractors) + [b for _, b in spec.extra_objects]
    for d in spec.distractors:
        if _overlaps(d, lot):
            raise ValidationError(f"distractor {d.as_tuple()} intersects the lot region")
    for d in boxes:
        if d.x1 < 0 or d.y1 < 0 or d.x2 > layout.width or d.y2 > layout.height:
            raise ValidationError(f"object {d.as_tuple()} lies outside the image")
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            if _overlaps(a, b):
                raise ValidationError(f"overlapping objects: {a.as_tuple()} and {b.as_tuple()}")
    for label, _ in spec.extra_objects:
        if label not in VEHICLE_COLORS:
            raise ValidationError(f"no colour for class {label!r}")


def synthetic_scene(spec: SceneSpec) -> SyntheticScene:
    """Render a scene and its ground truth. Same spec and seed give identical pixels."""
    _validate(spec)
    layout = spec.layout
    rng = np.random.default_rng(spec.seed)
    lo, hi = BACKGROUND_RANGE
    gray = rng.integers(lo, hi + 1, size=(layout.height, layout.width), dtype=np.uint8)
    px = np.repeat(gray[:, :, None], 3, axis=2)

    for s in layout.spots:
        x1, y1, x2, y2 = (int(v) for v in s.as_tuple())
        px[y1, x1:x2] = LINE_COLOR
        px[y2 - 1, x1:x2] = LINE_COLOR
        px[y1:y2, x1] = LINE_COLOR
        px[y1:y2, x2 - 1] = LINE_COLOR

    vw, vh = layout.vehicle_size
    j = layout.jitter
    truth: list[Detection] = []
    for idx in sorted(spec.occupied):
        s = layout.spots[idx]
        cx0 = int(s.x1) + (int(s.x2 - s.x1) - vw) // 2
        cy0 = int(s.y1) + (int(s.y2 - s.y1) - vh) // 2
        x1 = cx0 + int(rng.integers(-j, j + 1))
        y1 = cy0 + int(rng.integers(-j, j + 1))
        label = "truck" if rng.random() < spec.truck_fraction else "car"
        truth.append(Detection(label, 1.0, BoundingBox(x1, y1, x1 + vw, y1 + vh)))
    truth.extend(Detection("car", 1.0, d) for d in spec.distractors)
    truth.extend(Detection(label, 1.0, b) for label, b in spec.extra_objects)

    for det in truth:
        x1, y1, x2, y2 = (int(v) for v in det.box.as_tuple())
        px[y1:y2, x1:x2] = VEHICLE_COLORS[det.class_label]

    return SyntheticScene(ImageBuffer(px), tuple(truth), len(spec.occupied), spec)


def place_distractors(layout: LotLayout, n: int, rng: random.Random) -> tuple[BoundingBox, ...]:
    """Place ``n`` non-touching vehicles in the street band."""
    vw, vh = layout.vehicle_size
    st = layout.street
    slots = int((st.x2 - st.x1) // (vw + 2))
    if n > slots:
        raise ValidationError(f"street fits at most {slots} distractors")
    chosen = sorted(rng.sample(range(slots), n))
    out = []
    for k in chosen:
        x1 = int(st.x1) + k * (vw + 2) + 1
        y1 = int(st.y1) + rng.randrange(0, int(st.y2 - st.y1) - vh + 1)
        out.append(BoundingBox(x1, y1, x1 + vw, y1 + vh))
    return tuple(out)


def random_scene_spec(
    layout: LotLayout,
    seed: int,
    *,
    min_occupied: int = 1,
    max_distractors: int = 5,
) -> SceneSpec:
    rng = random.Random(seed)
    n_occ = rng.randint(min_occupied, layout.capacity)
    occupied = frozenset(rng.sample(range(layout.capacity), n_occ))
    distractors = place_distractors(layout, rng.randint(0, max_distractors), rng)
    return SceneSpec(layout, occupied, distractors, seed=seed)


def generate_corpus(
    n: int,
    seed: int = 0,
    layout: LotLayout | None = None,
    **kwargs,
) -> list[tuple[str, SyntheticScene]]:
    """``n`` random scenes keyed ``scene_0000.png``, ``scene_0001.png``, ..."""
    layout = layout or default_layout()
    return [
        (f"scene_{i:04d}.png", synthetic_scene(random_scene_spec(layout, seed * 100_003 + i, **kwargs)))
        for i in range(n)
    ]

