"""SVG charts rendered with matplotlib's Agg/SVG backend."""

from __future__ import annotations

import io
import math
from collections.abc import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", bbox_inches="tight")
    plt.close(fig)
    return buf.getvalue()


def log_axis_limits(values: Sequence[float], pad_decades: float = 0.25) -> tuple[float, float]:
    """Y-limits for a log axis that contain every positive value with margin."""
    pos = [v for v in values if v > 0]
    if not pos:
        return (0.1, 10.0)
    lo = math.floor(math.log10(min(pos)) - pad_decades)
    hi = math.ceil(math.log10(max(pos)) + pad_decades)
    return (10.0**lo, 10.0**hi)


def latency_figure(rows: Sequence[Mapping], reference: Mapping[str, tuple[float, float]] | None = None):
    hardware = sorted({r["hardware"] for r in rows})
    models = sorted({r["model"] for r in rows})
    width = 0.8 / max(1, len(models))
    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(hardware) + 2), 4.5))
    for j, model in enumerate(models):
        xs, ys, errs = [], [], []
        for i, hw in enumerate(hardware):
            for r in rows:
                if r["hardware"] == hw and r["model"] == model:
                    xs.append(i + (j - (len(models) - 1) / 2) * width)
                    ys.append(r["mean_ms"])
                    errs.append(r["std_ms"])
        ax.bar(xs, ys, width=width, yerr=errs, capsize=2, label=model)
    values = [r["mean_ms"] for r in rows] + [r["mean_ms"] + r["std_ms"] for r in rows]
    if reference:
        for name, (mean, _std) in sorted(reference.items()):
            ax.axhline(mean, linestyle="--", linewidth=0.7, color="gray")
            ax.annotate(f"{name} ref {mean:g} ms", (len(hardware) - 0.5, mean), fontsize=6, ha="right", va="bottom")
            values.append(mean)
    ax.set_yscale("log")
    ax.set_ylim(*log_axis_limits(values))
    ax.set_xticks(range(len(hardware)))
    ax.set_xticklabels(hardware, rotation=20, ha="right")
    ax.set_ylabel("mean inference time per image (ms, log scale)")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def latency_chart(rows: Sequence[Mapping], reference: Mapping[str, tuple[float, float]] | None = None) -> str:
    return _to_svg(latency_figure(rows, reference))


def balanced_accuracy_chart(entries: Sequence[Mapping]) -> str:
    """Grouped bars of balanced accuracy; entries carry ``model``, ``roi_method``, ``balanced_accuracy``."""
    models = sorted({e["model"] for e in entries})
    methods = sorted({e["roi_method"] for e in entries})
    width = 0.8 / max(1, len(methods))
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(models) + 2), 4))
    for j, method in enumerate(methods):
        xs, ys = [], []
        for i, m in enumerate(models):
            for e in entries:
                if e["model"] == m and e["roi_method"] == method:
                    xs.append(i + (j - (len(methods) - 1) / 2) * width)
                    ys.append(100 * e["balanced_accuracy"])
        ax.bar(xs, ys, width=width, label=f"{method}-processing mask")
    ax.set_xticks(range(len(models)))
    ax.set_xticklabels(models)
    ax.set_ylim(0, 100)
    ax.set_ylabel("balanced accuracy (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _to_svg(fig)


def cost_figure(rows: Sequence[Mapping], breakeven: int):
    n = [r["spaces"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(n, [r["camera_usd"] for r in rows], label="camera system", drawstyle="steps-post")
    ax.plot(n, [r["sensor_usd"] for r in rows], label="per-space sensors", marker=".")
    ax.axvline(breakeven, linestyle="--", color="gray")
    ax.annotate(f"break-even: {breakeven} spaces", (breakeven, 0), xytext=(4, 4), textcoords="offset points", fontsize=8)
    ax.set_xlim(min(n), max(n))
    top = max(max(r["camera_usd"], r["sensor_usd"]) for r in rows)
    ax.set_ylim(0, top * 1.05)
    ax.set_xlabel("parking spaces")
    ax.set_ylabel("cumulative cost (USD)")
    ax.legend()
    fig.tight_layout()
    return fig


def cost_chart(rows: Sequence[Mapping], breakeven: int) -> str:
    return _to_svg(cost_figure(rows, breakeven))
