"""Camera-vs-sensor deployment cost and break-even lot size.

One camera system covers a whole lot; larger lots needing several cameras
are modelled as ``cameras * camera_total``. Sensors cost a fixed amount per
space. Maintenance is not modelled: sensor deployments have one device per
space to service, camera deployments a handful of units, but no figures are
available to put a number on it.

Two parameterizations are shipped. The itemized bills of materials give
120 USD per camera system and 30 USD per sensor space; the headline
estimate quotes 177 USD and 15 USD. They disagree, so both are kept.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from .domain import ValidationError


@dataclass(frozen=True)
class LineItem:
    name: str
    quantity: int
    unit_cost: Decimal

    def __post_init__(self) -> None:
        object.__setattr__(self, "unit_cost", Decimal(str(self.unit_cost)))
        if self.quantity < 0:
            raise ValidationError(f"{self.name}: negative quantity")
        if self.unit_cost < 0:
            raise ValidationError(f"{self.name}: negative cost")

    @property
    def subtotal(self) -> Decimal:
        return self.quantity * self.unit_cost


@dataclass(frozen=True)
class BillOfMaterials:
    name: str
    items: tuple[LineItem, ...]

    @property
    def total(self) -> Decimal:
        return bom_total(self)

    @classmethod
    def from_mapping(cls, data: Mapping) -> BillOfMaterials:
        items = tuple(
            LineItem(str(it["name"]), int(it.get("quantity", 1)), Decimal(str(it["unit_cost"])))
            for it in data.get("items", [])
        )
        return cls(str(data.get("name", "bom")), items)


def bom_total(bom: BillOfMaterials) -> Decimal:
    if not bom.items:
        raise ValidationError("bill of materials is empty")
    return sum((it.subtotal for it in bom.items), Decimal(0))


CAMERA_BOM = BillOfMaterials(
    "camera",
    (
        LineItem("Raspberry Pi 4 Model B (4GB RAM)", 1, Decimal(55)),
        LineItem("Raspberry Pi Camera Module 3", 1, Decimal(25)),
        LineItem("Power Supply", 1, Decimal(10)),
        LineItem("MicroSD Card", 1, Decimal(15)),
        LineItem("Case (Weatherproof)", 1, Decimal(15)),
    ),
)

SENSOR_BOM = BillOfMaterials(
    "sensor (per space)",
    (
        LineItem("Microcontroller", 1, Decimal(5)),
        LineItem("Small Solar Panel", 1, Decimal(5)),
        LineItem("Battery", 1, Decimal(6)),
        LineItem("Charge Controller", 1, Decimal(2)),
        LineItem("Sensor", 1, Decimal(2)),
        LineItem("Enclosure (Weatherproof)", 1, Decimal(10)),
    ),
)

# headline estimate, inconsistent with the itemized tables above
PROSE_CAMERA_TOTAL = Decimal(177)
PROSE_SENSOR_PER_SPACE = Decimal(15)


def _exact(v) -> Fraction:
    return Fraction(Decimal(str(v)))


def breakeven_spaces(camera_total, sensor_per_space, cameras: int = 1) -> int:
    """Smallest lot size where per-space sensors cost at least as much as the cameras."""
    cam = _exact(camera_total) * cameras
    sensor = _exact(sensor_per_space)
    if sensor <= 0:
        raise ValidationError("sensor cost per space must be positive")
    if cam <= 0:
        raise ValidationError("camera cost must be positive")
    return math.ceil(cam / sensor)


def cost_curves(camera_total, sensor_per_space, max_spaces: int, cameras: int = 1) -> tuple[list[dict], int, str]:
    """Cumulative cost per lot size for both options.

    Returns the table rows (spaces 1..max_spaces), the break-even size and
    an SVG chart with the break-even marked.
    """
    from .charts import cost_chart

    n_star = breakeven_spaces(camera_total, sensor_per_space, cameras)
    if max_spaces < n_star:
        raise ValidationError(f"max_spaces {max_spaces} is below the break-even point {n_star}")
    cam = Decimal(str(camera_total)) * cameras
    sensor = Decimal(str(sensor_per_space))
    rows = [
        {"spaces": n, "camera_usd": cam, "sensor_usd": n * sensor, "camera_cheaper": cam <= n * sensor}
        for n in range(1, max_spaces + 1)
    ]
    return rows, n_star, cost_chart([{**r, "camera_usd": float(r["camera_usd"]), "sensor_usd": float(r["sensor_usd"])} for r in rows], n_star)


def curves_csv(rows: Iterable[Mapping]) -> str:
    lines = ["spaces,camera_usd,sensor_usd,camera_cheaper"]
    for r in rows:
        lines.append(f"{r['spaces']},{r['camera_usd']},{r['sensor_usd']},{str(r['camera_cheaper']).lower()}")
    return "\n".join(lines) + "\n"


def load_bom(path: str | Path) -> BillOfMaterials:
    import yaml

    with open(path) as fh:
        return BillOfMaterials.from_mapping(yaml.safe_load(fh) or {})
