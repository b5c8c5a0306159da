"""Command-line entry point.

Subcommands: refine, eval, stats, synth, selftest. Exit codes: 0 on
success, 1 when any image failed (or a selftest check failed), 2 on bad
configuration or usage. The UO_SAM_BRIDGE environment variable overrides
the configured backend address; an explicit --backend flag beats both.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from .core import save_image, save_label_map
from .errors import BadConfig, MaskRefineError
from .metrics import CategoryHistogram, format_delta
from .pipeline import (
    ENV_BRIDGE,
    BackendConfig,
    PipelineConfig,
    run_eval,
    run_refine,
    run_stats,
)
from .synth import CorruptionSpec, SceneSpec, generate_scene
from .wire import encode_frame

_CONFIG_FLAGS = (
    "points_per_side",
    "grid_offset",
    "grid_spacing",
    "crop_layers",
    "crop_overlap",
    "min_score",
    "nms_iou",
    "band_fraction",
    "beta_sq",
    "worker_count",
    "proposals_requested",
    "connectivity",
    "class_count",
)
_INT_FLAGS = {
    "points_per_side",
    "crop_layers",
    "worker_count",
    "proposals_requested",
    "connectivity",
    "class_count",
}


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument(
        "--backend", help="mock | stdio:<command> | tcp:<host>:<port>"
    )
    parser.add_argument("--workers", type=int, help="worker pool size")
    parser.add_argument(
        "--no-lro", action="store_true", help="skip per-object refinement"
    )
    parser.add_argument(
        "--no-gro", action="store_true", help="skip image-wide fusion"
    )
    for name in _CONFIG_FLAGS:
        parser.add_argument(
            f"--{name}",
            dest=f"cfg_{name}",
            type=int if name in _INT_FLAGS else float,
            help=argparse.SUPPRESS,
        )


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    config = (
        PipelineConfig.from_file(args.config)
        if getattr(args, "config", None)
        else PipelineConfig()
    )
    env_backend = os.environ.get(ENV_BRIDGE)
    if env_backend:
        config = dataclasses.replace(config, backend=BackendConfig.parse(env_backend))
    if getattr(args, "backend", None):
        config = dataclasses.replace(
            config, backend=BackendConfig.parse(args.backend)
        )
    overrides = {}
    if getattr(args, "workers", None) is not None:
        overrides["worker_count"] = args.workers
    if getattr(args, "no_lro", False):
        overrides["enable_lro"] = False
    if getattr(args, "no_gro", False):
        overrides["enable_gro"] = False
    for name in _CONFIG_FLAGS:
        value = getattr(args, f"cfg_{name}", None)
        if value is not None:
            overrides[name] = value
    if overrides:
        config = dataclasses.replace(config, **overrides)
    config.validate()
    return config


def _cmd_refine(args: argparse.Namespace) -> int:
    config = _build_config(args)
    summary = run_refine(config, args.input_dir, args.output_dir)
    print(
        f"refined {summary.succeeded}/{summary.total} images"
        + (f" ({summary.failed} failed)" if summary.failed else "")
    )
    return summary.exit_code


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _build_config(args)
    report, per_image = run_eval(
        args.pred_dir, args.gt_dir, config, baseline_dir=args.baseline
    )
    doc = report.to_dict()
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.jsonl:
        with open(args.jsonl, "w") as fh:
            for row in per_image:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            fh.write(
                json.dumps({"aggregate": True, **{k: doc[k] for k in
                            ("miou", "b_miou", "pixel_acc", "img_acc", "f_beta")}},
                           sort_keys=True) + "\n"
            )
    if report.deltas is not None:
        for name, value in report.deltas.values.items():
            print(f"delta {name}: {format_delta(value)}")
    return 0


def _print_histogram(hist: CategoryHistogram) -> None:
    labels = "  ".join(f"{b:>4}" for b in CategoryHistogram.BUCKET_LABELS)
    counts = "  ".join(f"{c:>4}" for c in hist.buckets)
    print(f"categories per image:  {labels}")
    print(f"number of images:      {counts}")
    if hist.zero_count:
        print(f"images with no foreground class: {hist.zero_count}")


def _cmd_stats(args: argparse.Namespace) -> int:
    hist = run_stats(args.gt_dir)
    if hist.zero_count == 0 and not any(hist.buckets):
        print("warning: no label maps found", file=sys.stderr)
    _print_histogram(hist)
    return 0


def _parse_object_count(text: str) -> tuple[int, int]:
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    value = int(text)
    return value, value


def _cmd_synth(args: argparse.Namespace) -> int:
    lo, hi = _parse_object_count(args.objects)
    if lo < 1 or hi < lo:
        raise BadConfig(f"bad object count range {args.objects!r}")
    out = Path(args.out)
    for sub in ("images", "coarse", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    corruption = CorruptionSpec(
        dilate_px=args.dilate,
        erode_px=args.erode,
        boundary_noise_prob=args.noise,
        drop_fragment_prob=args.drop,
    )
    entries = []
    for index in range(args.scenes):
        seed = args.seed + index
        spec = SceneSpec(
            seed=seed,
            width=args.width,
            height=args.height,
            object_count=lo + (seed % (hi - lo + 1)),
            shape_kinds=tuple(args.shapes.split(",")),
            corruption=corruption,
        )
        image, gt, coarse, _ = generate_scene(spec)
        name = f"scene_{index:04d}"
        save_image(image, out / "images" / f"{name}.png")
        save_label_map(gt, out / "gt" / f"{name}.png")
        save_label_map(coarse, out / "coarse" / f"{name}.png")
        entries.append(
            {
                "image": f"images/{name}.png",
                "coarse": f"coarse/{name}.png",
                "gt": f"gt/{name}.png",
                "seed": seed,
                "objects": spec.object_count,
            }
        )
    manifest = {
        "width": args.width,
        "height": args.height,
        "corruption": dataclasses.asdict(corruption),
        "pairs": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {args.scenes} scenes under {out}")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    """Compact end-to-end check against the in-process mock backend."""
    failures = 0

    def check(label: str, ok: bool) -> None:
        nonlocal failures
        print(f"selftest {label}: {'PASS' if ok else 'FAIL'}")
        failures += 0 if ok else 1

    frame = encode_frame(b'{"op":"ping"}')
    check("frame-codec", frame[:4] == b"\x0d\x00\x00\x00" and len(frame) == 17)

    from .metrics import evaluate
    from .core import load_label_map

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        synth_args = argparse.Namespace(
            out=root / "fixtures",
            scenes=6,
            seed=7,
            width=96,
            height=96,
            objects="1-3",
            shapes="disk,rectangle,blob",
            dilate=3,
            erode=0,
            noise=0.1,
            drop=0.0,
        )
        _cmd_synth(synth_args)
        config = PipelineConfig(points_per_side=16)
        started = time.monotonic()
        summary = run_refine(config, root / "fixtures", root / "refined")
        elapsed = time.monotonic() - started
        check("refine-all-ok", summary.failed == 0)
        names = sorted(p.name for p in (root / "fixtures" / "gt").glob("*.png"))
        preds = [load_label_map(root / "refined" / n) for n in names]
        gts = [load_label_map(root / "fixtures" / "gt" / n) for n in names]
        coarse = [load_label_map(root / "fixtures" / "coarse" / n) for n in names]
        refined_report = evaluate(preds, gts)
        coarse_report = evaluate(coarse, gts)
        check("exact-recovery", refined_report.miou == 1.0)
        check("improves-coarse", refined_report.miou >= coarse_report.miou + 0.10)
        check("runtime", elapsed < 30.0)
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskrefine",
        description="Refine coarse segmentation label maps into fine-boundary maps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_refine = sub.add_parser("refine", help="refine a directory of image/label pairs")
    p_refine.add_argument("input_dir", type=Path)
    p_refine.add_argument("output_dir", type=Path)
    _add_config_arguments(p_refine)
    p_refine.set_defaults(func=_cmd_refine)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("pred_dir", type=Path)
    p_eval.add_argument("gt_dir", type=Path)
    p_eval.add_argument("--baseline", type=Path, help="directory to diff against")
    p_eval.add_argument("--out", type=Path, help="write the JSON report here")
    p_eval.add_argument("--jsonl", type=Path, help="write per-image JSON lines here")
    _add_config_arguments(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_stats = sub.add_parser("stats", help="category histogram of a label-map dir")
    p_stats.add_argument("gt_dir", type=Path)
    p_stats.set_defaults(func=_cmd_stats)

    p_synth = sub.add_parser("synth", help="generate synthetic fixtures")
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--scenes", type=int, default=10)
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--width", type=int, default=128)
    p_synth.add_argument("--height", type=int, default=128)
    p_synth.add_argument("--objects", default="1-3", help="count or lo-hi range")
    p_synth.add_argument("--shapes", default="disk,rectangle,blob")
    p_synth.add_argument("--dilate", type=int, default=0)
    p_synth.add_argument("--erode", type=int, default=0)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--drop", type=float, default=0.0)
    p_synth.set_defaults(func=_cmd_synth)

    p_self = sub.add_parser("selftest", help="run the built-in oracle checks")
    p_self.set_defaults(func=_cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BadConfig as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MaskRefineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
