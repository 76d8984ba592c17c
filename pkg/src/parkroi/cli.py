"""Command-line entry point: ``parkroi <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .domain import ValidationError


def _classes(text: str) -> frozenset[str]:
    return frozenset(c.strip() for c in text.split(",") if c.strip())


def _backend(args):
    from .backends import FixtureBackend, RemoteBackend, SyntheticBackend, UltralyticsBackend

    if args.backend == "synthetic":
        return SyntheticBackend(min_confidence=args.min_confidence)
    if args.backend == "fixture":
        if not args.fixture:
            raise SystemExit("--fixture is required with --backend fixture")
        return FixtureBackend.from_file(args.fixture)
    if args.backend == "remote":
        if not args.endpoint:
            raise SystemExit("--endpoint is required with --backend remote")
        return RemoteBackend(args.endpoint, args.timeout)
    if not args.weights:
        raise SystemExit("--weights is required with --backend ultralytics")
    return UltralyticsBackend(args.weights)


def _add_backend_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["synthetic", "fixture", "remote", "ultralytics"], default="synthetic")
    p.add_argument("--fixture", type=Path, help="detections file for --backend fixture")
    p.add_argument("--endpoint", help="inference URL for --backend remote")
    p.add_argument("--weights", help="model weights for --backend ultralytics")
    p.add_argument("--timeout", type=float, default=30.0, help="remote timeout in seconds")
    p.add_argument("--min-confidence", type=float, default=0.7, help="synthetic backend threshold")


def cmd_mask(args) -> int:
    from .images import load_image, save_image
    from .roi import apply_pre_mask, load_mask_file, mask_to_image

    mask = load_mask_file(args.mask, args.threshold)
    print(f"mask {args.mask}: {mask.width}x{mask.height}, ROI {100 * mask.roi_fraction:.2f}% of pixels")
    if args.preview:
        if args.image:
            preview = apply_pre_mask(load_image(args.image), mask)
        else:
            preview = mask_to_image(mask)
        save_image(preview, args.preview)
        print(f"preview written to {args.preview}")
    return 0


def cmd_count(args) -> int:
    from .images import list_images, load_image
    from .roi import apply_pre_mask, count_all, filter_detections, load_mask_file

    mask = load_mask_file(args.mask, args.threshold)
    backend = _backend(args)
    paths = list_images(args.input) if args.input.is_dir() else [args.input]
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        for p in paths:
            image = load_image(p)
            if args.roi_method == "pre":
                res = count_all(backend.detect(apply_pre_mask(image, mask), p.name), args.classes)
            else:
                res = filter_detections(backend.detect(image, p.name), mask, args.classes, image.shape)
            out.write(json.dumps({"image": p.name, "roi_method": args.roi_method, **res.to_dict()}) + "\n")
    finally:
        if args.output:
            out.close()
    return 0


def read_counts_file(path: Path):
    from .domain import CountResult

    preds = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            preds[rec["image"]] = CountResult.from_dict(rec)
    return preds


def cmd_eval(args) -> int:
    from .charts import balanced_accuracy_chart
    from .occupancy import dataset_filter, evaluate_dataset, read_labels_csv

    labels = read_labels_csv(Path(args.labels).read_text())
    removed = 0.0
    if args.drop_empty:
        labels, removed = dataset_filter(labels)
    preds = read_counts_file(args.predictions)
    ev = evaluate_dataset(labels, preds, args.capacity)
    report = ev.to_dict()
    report["removed_empty_fraction"] = removed
    report["model"] = args.model
    report["roi_method"] = args.roi_method
    m = ev.metrics
    print(
        f"n={len(ev.rows)} accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f} "
        f"f1={m.f1:.4f} specificity={m.specificity:.4f} balanced_accuracy={m.balanced_accuracy:.4f}"
    )
    if m.undefined:
        print(f"undefined (zero denominator, reported as 0): {', '.join(sorted(m.undefined))}")
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2))
    if args.chart:
        entry = {"model": args.model, "roi_method": args.roi_method, "balanced_accuracy": m.balanced_accuracy}
        Path(args.chart).write_text(balanced_accuracy_chart([entry]))
    return 0


def cmd_bench(args) -> int:
    from .bench import BenchPlan, compare_report, format_table, load_summary, run_bench
    from .images import list_images, load_image

    if args.compare:
        rows, svg = compare_report(load_summary(args.compare))
        print(format_table(rows))
        if args.chart:
            Path(args.chart).write_text(svg)
        return 0
    if not args.images:
        raise SystemExit("--images is required unless --compare is given")
    paths = list_images(args.images) if args.images.is_dir() else [args.images]
    if args.standard:
        paths = paths[:1]
        iterations, discard = 1500, 100
    else:
        iterations, discard = args.iterations, args.discard
    images = {p.name: load_image(p) for p in paths}
    backend = _backend(args)
    plan = BenchPlan(backend.descriptor.backend_id, tuple(images), iterations, discard, args.randomize, args.seed)
    result = run_bench(
        plan, backend, images, raw_path=args.raw, summary_path=args.summary, hardware_tag=args.hardware
    )
    s = result.stats
    print(f"{args.hardware} {backend.descriptor.model_id}: {s.mean_ms:.3f} ± {s.std_ms:.3f} ms "
          f"(n={s.samples_used}, discarded {s.discarded_warmup}, min {s.min_ms:.3f}, max {s.max_ms:.3f})")
    return 0


def cmd_serve(args) -> int:
    from .config import load_config
    from .service import serve

    config = load_config(args.config)
    gauges = serve(config, max_cycles=args.max_cycles)
    print(json.dumps({k: v for k, v in vars(gauges).items() if k != "published_keys"}))
    return 0


def cmd_cost(args) -> int:
    from .cost import (
        CAMERA_BOM,
        PROSE_CAMERA_TOTAL,
        PROSE_SENSOR_PER_SPACE,
        SENSOR_BOM,
        bom_total,
        cost_curves,
        curves_csv,
        load_bom,
    )

    if args.preset == "prose":
        camera, sensor = PROSE_CAMERA_TOTAL, PROSE_SENSOR_PER_SPACE
    else:
        camera = bom_total(load_bom(args.camera_bom) if args.camera_bom else CAMERA_BOM)
        sensor = bom_total(load_bom(args.sensor_bom) if args.sensor_bom else SENSOR_BOM)
    if args.camera_total is not None:
        camera = args.camera_total
    if args.sensor_per_space is not None:
        sensor = args.sensor_per_space
    rows, n_star, svg = cost_curves(camera, sensor, args.max_spaces, args.cameras)
    print(f"camera system {camera} USD x{args.cameras}, sensors {sensor} USD/space -> break-even at {n_star} spaces")
    if args.csv:
        Path(args.csv).write_text(curves_csv(rows))
    else:
        sys.stdout.write(curves_csv(rows))
    if args.svg:
        Path(args.svg).write_text(svg)
    return 0


def cmd_synth(args) -> int:
    from .images import save_image
    from .occupancy import LabeledImage, write_labels_csv
    from .synthetic import default_layout, generate_corpus

    out = args.output
    frames = out / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    layout = default_layout(args.scale)
    save_image(layout.mask_image(), out / "mask.png")
    labels = []
    for image_id, scene in generate_corpus(args.count, args.seed, layout):
        save_image(scene.image, frames / image_id)
        labels.append(LabeledImage(image_id, scene.in_roi_count))
    (out / "labels.csv").write_text(write_labels_csv(labels))
    print(f"wrote {args.count} scenes, mask.png and labels.csv to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parkroi", description="Camera-based parking occupancy with pixel-wise ROI masks.")
    parser.add_argument("--version", action="version", version=f"parkroi {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="load, validate and preview an ROI mask")
    p.add_argument("mask", type=Path)
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--preview", type=Path, help="write a preview PNG")
    p.add_argument("--image", type=Path, help="preview the pre-mask applied to this image")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("count", help="count vehicles in an image or directory")
    p.add_argument("input", type=Path)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--threshold", type=int, default=128)
    p.add_argument("--roi-method", choices=["pre", "post"], default="post")
    p.add_argument("--classes", type=_classes, default=frozenset({"car", "truck"}))
    p.add_argument("-o", "--output", type=Path, help="JSON-lines output (default stdout)")
    _add_backend_args(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="score counts against labels")
    p.add_argument("--labels", type=Path, required=True, help="CSV image_id,vehicle_count")
    p.add_argument("--predictions", type=Path, required=True, help="output of 'parkroi count'")
    p.add_argument("--capacity", type=int, required=True)
    p.add_argument("--drop-empty", action="store_true", help="ignore images labeled with zero vehicles")
    p.add_argument("--model", default="model")
    p.add_argument("--roi-method", default="post")
    p.add_argument("--report", type=Path)
    p.add_argument("--chart", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency benchmark with warmup discard")
    p.add_argument("--images", type=Path, help="image file or directory (preloaded)")
    p.add_argument("--iterations", type=int, default=1500)
    p.add_argument("--discard", type=int, default=100)
    p.add_argument("--standard", action="store_true", help="1500 iterations, discard 100, single image")
    p.add_argument("--randomize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hardware", default="unknown")
    p.add_argument("--raw", type=Path, help="raw samples CSV")
    p.add_argument("--summary", type=Path, help="summary JSON (merged)")
    p.add_argument("--compare", type=Path, help="render a summary JSON instead of running")
    p.add_argument("--chart", type=Path, help="SVG output for --compare")
    _add_backend_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the periodic capture loop")
    p.add_argument("config", type=Path)
    p.add_argument("--max-cycles", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("cost", help="camera vs sensor break-even")
    p.add_argument("--preset", choices=["tables", "prose"], default="tables")
    p.add_argument("--camera-bom", type=Path)
    p.add_argument("--sensor-bom", type=Path)
    p.add_argument("--camera-total", type=float)
    p.add_argument("--sensor-per-space", type=float)
    p.add_argument("--cameras", type=int, default=1)
    p.add_argument("--max-spaces", type=int, default=16)
    p.add_argument("--csv", type=Path)
    p.add_argument("--svg", type=Path)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("synth", help="write a synthetic replay corpus (frames, mask, labels)")
    p.add_argument("output", type=Path)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=int, default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, OSError) as exc:
        # backend, capture and benchmark failures
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
