"""Pipeline orchestration: configuration, dataset pairing, refine/eval runs.

A run takes a directory of (image, coarse label map) pairs, optionally
refines each class mask locally, reassembles a label map from the refined
masks, optionally fuses in image-wide proposals, and writes the results
plus a JSONL run log. Input pairing comes from a manifest.json listing
relative paths, falling back to name-matched ``X.png`` / ``X_coarse.png``
(and optional ``X_gt.png``) files.
"""
from __future__ import annotations

import json
import shutil
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    LabelMap,
    load_image,
    load_label_map,
    save_label_map,
    split_by_class,
)
from .errors import (
    BadConfig,
    DimensionMismatch,
    MaskRefineError,
    UnpairedFiles,
)
from .global_fuse import (
    category_vote_fuse,
    default_grid_spec,
    generate_crop_boxes,
    image_wide_segment,
)
from .core import GridSpec
from .local_refine import RefinementResult, refine_object
from .metrics import (
    CategoryHistogram,
    EvalReport,
    ReportDelta,
    category_stats,
    evaluate,
    report_delta,
)
from .segmenter import OracleBackend, SegmenterBackend
from .wire import BridgeBackend

ENV_BRIDGE = "UO_SAM_BRIDGE"


@dataclass(frozen=True)
class BackendConfig:
    """Which segmenter to talk to: in-process mock, stdio child, or TCP."""

    kind: str = "mock"
    command: str = ""
    host: str = ""
    port: int = 0
    inline_features: bool = False

    @classmethod
    def parse(cls, text: str) -> "BackendConfig":
        """Parse the compact form: mock | stdio:<command> | tcp:<host>:<port>."""
        if text == "mock":
            return cls(kind="mock")
        if text.startswith("stdio:"):
            command = text[len("stdio:") :]
            if not command:
                raise BadConfig("stdio backend needs a command")
            return cls(kind="stdio", command=command)
        if text.startswith("tcp:"):
            rest = text[len("tcp:") :]
            host, sep, port = rest.rpartition(":")
            if not sep or not host:
                raise BadConfig("tcp backend needs host:port")
            try:
                return cls(kind="tcp", host=host, port=int(port))
            except ValueError as exc:
                raise BadConfig(f"bad tcp port {port!r}") from exc
        raise BadConfig(f"unrecognized backend {text!r}")

    def create(self) -> SegmenterBackend:
        if self.kind == "mock":
            return OracleBackend()
        if self.kind == "stdio":
            return BridgeBackend.spawn_stdio(
                self.command, inline_features=self.inline_features
            )
        if self.kind == "tcp":
            return BridgeBackend.connect_tcp(
                self.host, self.port, inline_features=self.inline_features
            )
        raise BadConfig(f"unrecognized backend kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    points_per_side: int = 32
    grid_offset: Optional[float] = None  # None: half the spacing
    grid_spacing: Optional[float] = None  # None: longest side / points_per_side
    crop_layers: int = 1
    crop_overlap: float = 0.25
    min_score: float = 0.8
    nms_iou: float = 0.7
    band_fraction: float = 0.02
    beta_sq: float = 0.3
    worker_count: int = 1
    enable_lro: bool = True
    enable_gro: bool = True
    proposals_requested: int = 3
    connectivity: int = 8
    class_count: Optional[int] = None

    def validate(self) -> None:
        if self.points_per_side < 1:
            raise BadConfig("points_per_side must be >= 1")
        if self.crop_layers < 1:
            raise BadConfig("crop_layers must be >= 1")
        if not (0.0 <= self.crop_overlap < 1.0):
            raise BadConfig("crop_overlap must lie in [0, 1)")
        if not (0.0 <= self.nms_iou <= 1.0):
            raise BadConfig("nms_iou must lie in [0, 1]")
        if self.min_score < 0.0:
            raise BadConfig("min_score must be >= 0")
        if self.band_fraction <= 0.0:
            raise BadConfig("band_fraction must be positive")
        if self.beta_sq <= 0.0:
            raise BadConfig("beta_sq must be positive")
        if self.worker_count < 1:
            raise BadConfig("worker_count must be >= 1")
        if self.connectivity not in (4, 8):
            raise BadConfig("connectivity must be 4 or 8")
        if self.proposals_requested < 1:
            raise BadConfig("proposals_requested must be >= 1")
        if self.grid_spacing is not None and self.grid_spacing <= 0:
            raise BadConfig("grid_spacing must be positive")
        if self.grid_offset is not None and self.grid_offset < 0:
            raise BadConfig("grid_offset must be >= 0")

    def grid_for(self, width: int, height: int) -> GridSpec:
        spacing = self.grid_spacing
        if spacing is None:
            spacing = max(width, height) / self.points_per_side
        offset = self.grid_offset if self.grid_offset is not None else spacing / 2.0
        return GridSpec(self.points_per_side, offset, spacing)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise BadConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        backend = kwargs.pop("backend", None)
        if backend is not None:
            if isinstance(backend, str):
                kwargs["backend"] = BackendConfig.parse(backend)
            elif isinstance(backend, dict):
                kwargs["backend"] = BackendConfig(**backend)
            else:
                raise BadConfig("backend must be a string or object")
        try:
            config = cls(**kwargs)
        except TypeError as exc:
            raise BadConfig(str(exc)) from exc
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: Path | str) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise BadConfig("config file must hold a JSON object")
        return cls.from_dict(doc)


@dataclass(frozen=True)
class DatasetPair:
    name: str
    image_path: Path
    coarse_path: Path
    gt_path: Optional[Path] = None


def load_pairs(input_dir: Path | str) -> list[DatasetPair]:
    """Resolve the manifest, or fall back to name-matched PNG pairs."""
    root = Path(input_dir)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        doc = json.loads(manifest_path.read_text())
        entries = doc.get("pairs", doc) if isinstance(doc, dict) else doc
        if not isinstance(entries, list):
            raise UnpairedFiles("manifest.json must list pairs")
        pairs = []
        for entry in entries:
            name = Path(entry["image"]).stem
            gt = entry.get("gt")
            pairs.append(
                DatasetPair(
                    name=name,
                    image_path=root / entry["image"],
                    coarse_path=root / entry["coarse"],
                    gt_path=root / gt if gt else None,
                )
            )
        return sorted(pairs, key=lambda p: p.name)
    pairs = []
    for coarse in sorted(root.glob("*_coarse.png")):
        name = coarse.name[: -len("_coarse.png")]
        image = root / f"{name}.png"
        gt = root / f"{name}_gt.png"
        pairs.append(
            DatasetPair(
                name=name,
                image_path=image,
                coarse_path=coarse,
                gt_path=gt if gt.exists() else None,
            )
        )
    return pairs


def merge_refined_masks(
    coarse: LabelMap, results: dict[int, RefinementResult]
) -> LabelMap:
    """Paste refined class masks back into one label map.

    Every successfully refined class's coarse pixels are cleared first, so
    refinement can shrink a region; classes without a result keep their
    coarse pixels. Contested pixels go to the higher final score, ties to
    the lower class ID.
    """
    out = coarse.labels.copy()
    for class_id in results:
        out[coarse.labels == class_id] = 0
    claimed = np.zeros(out.shape, dtype=bool)
    order = sorted(results, key=lambda cid: (-results[cid].final.score, cid))
    for class_id in order:
        bits = results[class_id].final.mask.bits & ~claimed
        out[bits] = class_id
        claimed |= bits
    return LabelMap(out, coarse.ignore_id)


@dataclass
class ImageRecord:
    name: str
    status: str  # ok | failed
    classes: list[dict] = field(default_factory=list)
    error: str = ""

    def to_json(self) -> dict:
        doc = {"file": self.name, "status": self.status, "classes": self.classes}
        if self.error:
            doc["error"] = self.error
        return doc


@dataclass
class RunSummary:
    total: int
    succeeded: int
    failed: int
    records: list[ImageRecord]

    @property
    def exit_code(self) -> int:
        return 0 if self.failed == 0 else 1


def refine_label_map(
    backend: SegmenterBackend,
    image,
    coarse: LabelMap,
    config: PipelineConfig,
) -> tuple[LabelMap, list[dict]]:
    """Run the enabled stages on one (image, coarse map) pair."""
    class_log: list[dict] = []
    lro_map = coarse
    if config.enable_lro:
        results: dict[int, RefinementResult] = {}
        for class_id, mask in split_by_class(coarse):
            try:
                result = refine_object(
                    backend,
                    image,
                    mask,
                    class_id=class_id,
                    connectivity=config.connectivity,
                    proposals_requested=config.proposals_requested,
                )
            except MaskRefineError as exc:
                class_log.append(
                    {"class_id": class_id, "status": "kept_coarse", "error": str(exc)}
                )
                continue
            results[class_id] = result
            class_log.append(
                {
                    "class_id": class_id,
                    "status": "degraded" if result.degraded else "refined",
                    "score": result.final.score,
                }
            )
        lro_map = merge_refined_masks(coarse, results)
    out_map = lro_map
    if config.enable_gro:
        spec = config.grid_for(image.width, image.height)
        crops = generate_crop_boxes(
            image.width, image.height, config.crop_layers, config.crop_overlap
        )
        proposals = image_wide_segment(
            backend,
            image,
            spec,
            crops,
            config.min_score,
            config.nms_iou,
            config.proposals_requested,
        )
        out_map = category_vote_fuse(proposals, lro_map)
    return out_map, class_log


def run_refine(
    config: PipelineConfig,
    input_dir: Path | str,
    output_dir: Path | str,
    backend_factory: Optional[Callable[[], SegmenterBackend]] = None,
) -> RunSummary:
    """Refine every pair in input_dir, writing maps and a JSONL run log.

    Per-image failures are logged and skipped; the summary's exit code is
    nonzero iff any image failed. Workers each own a backend instance.
    """
    config.validate()
    out_root = Path(output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    pairs = load_pairs(input_dir)
    factory = backend_factory or config.backend.create
    local = threading.local()
    shared_mock = OracleBackend() if config.backend.kind == "mock" and backend_factory is None else None

    def get_backend() -> SegmenterBackend:
        if shared_mock is not None:
            return shared_mock
        backend = getattr(local, "backend", None)
        if backend is None:
            backend = factory()
            local.backend = backend
        return backend

    def process(pair: DatasetPair) -> ImageRecord:
        try:
            if not config.enable_lro and not config.enable_gro:
                # Identity pipeline: pass the coarse file through untouched.
                shutil.copyfile(pair.coarse_path, out_root / f"{pair.name}.png")
                return ImageRecord(pair.name, "ok")
            image = load_image(pair.image_path)
            coarse = load_label_map(pair.coarse_path)
            if (coarse.height, coarse.width) != (image.height, image.width):
                raise DimensionMismatch(
                    f"coarse map {coarse.width}x{coarse.height} does not match "
                    f"image {image.width}x{image.height}"
                )
            refined, class_log = refine_label_map(
                get_backend(), image, coarse, config
            )
            save_label_map(refined, out_root / f"{pair.name}.png")
            return ImageRecord(pair.name, "ok", classes=class_log)
        except (MaskRefineError, OSError) as exc:
            return ImageRecord(pair.name, "failed", error=str(exc))

    if config.worker_count > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            records = list(pool.map(process, pairs))
    else:
        records = [process(pair) for pair in pairs]
    records.sort(key=lambda r: r.name)
    log_path = out_root / "run_log.jsonl"
    with open(log_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    failed = sum(1 for r in records if r.status == "failed")
    return RunSummary(len(records), len(records) - failed, failed, records)


def _paired_maps(
    pred_dir: Path | str, gt_dir: Path | str
) -> tuple[list[str], list[LabelMap], list[LabelMap]]:
    pred_root, gt_root = Path(pred_dir), Path(gt_dir)
    pred_names = {p.name for p in pred_root.glob("*.png")}
    gt_names = {p.name for p in gt_root.glob("*.png")}
    if not pred_names or pred_names != gt_names:
        missing = sorted(pred_names ^ gt_names)
        raise UnpairedFiles(
            f"prediction and ground-truth files do not pair up (mismatch: {missing[:5]})"
        )
    names = sorted(pred_names)
    preds = [load_label_map(pred_root / n) for n in names]
    gts = [load_label_map(gt_root / n) for n in names]
    return names, preds, gts


def run_eval(
    pred_dir: Path | str,
    gt_dir: Path | str,
    config: PipelineConfig,
    baseline_dir: Optional[Path | str] = None,
) -> tuple[EvalReport, list[dict]]:
    """Score pred_dir against gt_dir; returns (report, per-image rows).

    With a baseline directory, the report carries refined-minus-baseline
    metric deltas.
    """
    names, preds, gts = _paired_maps(pred_dir, gt_dir)
    report = evaluate(
        preds,
        gts,
        class_count=config.class_count,
        band_fraction=config.band_fraction,
        beta_sq=config.beta_sq,
    )
    per_image = []
    for name, pred, gt in zip(names, preds, gts):
        row = evaluate(
            [pred],
            [gt],
            class_count=config.class_count,
            band_fraction=config.band_fraction,
            beta_sq=config.beta_sq,
        )
        per_image.append(
            {
                "file": name,
                "miou": row.miou,
                "b_miou": row.b_miou,
                "pixel_acc": row.pixel_acc,
                "f_beta": row.f_beta,
            }
        )
    if baseline_dir is not None:
        _, base_preds, base_gts = _paired_maps(baseline_dir, gt_dir)
        baseline = evaluate(
            base_preds,
            base_gts,
            class_count=config.class_count,
            band_fraction=config.band_fraction,
            beta_sq=config.beta_sq,
        )
        deltas = report_delta(baseline, report)
        report = replace(
            report, deltas=ReportDelta(str(baseline_dir), deltas)
        )
    return report, per_image


def run_stats(gt_dir: Path | str) -> CategoryHistogram:
    """Category-count histogram over every label map in a directory."""
    paths = sorted(Path(gt_dir).glob("*.png"))
    return category_stats([load_label_map(p) for p in paths])
