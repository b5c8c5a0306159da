"""Shared raster types and conversions between label maps and binary masks.

Conventions used throughout the package:

- Coordinates are (column x, row y), origin at the top-left corner.
- Rasters are stored row-major as numpy arrays shaped (height, width[, channels]).
- Box coordinates are inclusive on both ends: a box spanning a single pixel
  has x_min == x_max and y_min == y_max.
- Class ID 0 is background; the ignore ID (default 255) marks unlabeled pixels.
- All types are immutable after construction (backing arrays are flagged
  read-only), so values may be shared freely across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image as PILImage

from .errors import DimensionMismatch, LabelOutOfRange

BACKGROUND_ID = 0
DEFAULT_IGNORE_ID = 255


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionMismatch("Image.data must have shape (H, W, 3)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("Image must be at least 1x1")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_flat(cls, width: int, height: int, samples: Sequence[int]) -> "Image":
        flat = np.asarray(samples, dtype=np.uint8)
        if flat.size != width * height * 3:
            raise DimensionMismatch(
                f"expected {width * height * 3} samples, got {flat.size}"
            )
        return cls(flat.reshape(height, width, 3))

    def crop(self, box: "BoxPrompt") -> "Image":
        return Image(self.data[box.y_min : box.y_max + 1, box.x_min : box.x_max + 1])


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ID raster, shape (height, width), dtype uint8."""

    labels: np.ndarray
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionMismatch("LabelMap.labels must be 2D (H, W)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionMismatch("LabelMap must be at least 1x1")
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise LabelOutOfRange("class IDs must lie in [0, 255]")
        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        object.__setattr__(self, "labels", _frozen(arr))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @classmethod
    def from_flat(
        cls, width: int, height: int, labels: Sequence[int], ignore_id: int = DEFAULT_IGNORE_ID
    ) -> "LabelMap":
        flat = np.asarray(labels)
        if flat.size != width * height:
            raise DimensionMismatch(f"expected {width * height} labels, got {flat.size}")
        return cls(flat.reshape(height, width), ignore_id)

    def validate_classes(self, class_count: int) -> None:
        """Raise unless every non-ignore ID is < class_count."""
        scored = self.labels[self.labels != self.ignore_id]
        if scored.size and int(scored.max()) >= class_count:
            raise LabelOutOfRange(
                f"label {int(scored.max())} exceeds class count {class_count}"
            )

    def class_ids(self) -> list[int]:
        """Distinct non-background, non-ignore IDs, ascending."""
        ids = np.unique(self.labels)
        return [int(i) for i in ids if i != BACKGROUND_ID and i != self.ignore_id]


@dataclass(frozen=True)
class BinaryMask:
    """Boolean raster, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise DimensionMismatch("BinaryMask.bits must be 2D (H, W)")
        object.__setattr__(self, "bits", _frozen(arr))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    @classmethod
    def from_flat(cls, width: int, height: int, bits: Sequence[bool]) -> "BinaryMask":
        flat = np.asarray(bits, dtype=bool)
        if flat.size != width * height:
            raise DimensionMismatch(f"expected {width * height} bits, got {flat.size}")
        return cls(flat.reshape(height, width))


@dataclass(frozen=True)
class FeatureMap:
    """Dense image embedding, shape (height_f, width_f, channels), float32.

    stride_to_image maps feature-grid coordinates to image pixels: the
    center of feature cell (r, c) corresponds to image pixel
    (floor((c + 0.5) * stride), floor((r + 0.5) * stride)).
    """

    data: np.ndarray
    stride_to_image: float = 1.0

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise DimensionMismatch("FeatureMap.data must be 3D (H, W, C)")
        if arr.shape[2] < 1:
            raise DimensionMismatch("FeatureMap needs at least one channel")
        if not np.isfinite(arr).all():
            raise ValueError("FeatureMap values must be finite")
        if self.stride_to_image <= 0:
            raise ValueError("stride_to_image must be positive")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height_f(self) -> int:
        return self.data.shape[0]

    @property
    def width_f(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DownsampledMask:
    """Binary mask resampled onto a feature grid, shape (height_f, width_f)."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.bits, dtype=bool)
        if arr.ndim != 2:
            raise DimensionMismatch("DownsampledMask.bits must be 2D (H, W)")
        object.__setattr__(self, "bits", _frozen(arr))

    @property
    def height_f(self) -> int:
        return self.bits.shape[0]

    @property
    def width_f(self) -> int:
        return self.bits.shape[1]

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True)
class ForegroundFeatureSet:
    """Feature vectors gathered from foreground cells, shape (n, channels)."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if arr.ndim != 2:
            raise DimensionMismatch("ForegroundFeatureSet.vectors must be 2D (n, C)")
        object.__setattr__(self, "vectors", _frozen(arr))

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def channels(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-cell score raster on the feature grid, shape (height_f, width_f)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch("ConfidenceMap.values must be 2D (H, W)")
        if not np.isfinite(arr).all():
            raise ValueError("ConfidenceMap values must be finite")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def height_f(self) -> int:
        return self.values.shape[0]

    @property
    def width_f(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PointPrompt:
    """A single point cue in image pixel coordinates."""

    x: int
    y: int
    positive: bool = True

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError("point coordinates must be non-negative")


@dataclass(frozen=True)
class BoxPrompt:
    """Axis-aligned box in image pixel coordinates, inclusive on both ends."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("box min coordinates must not exceed max coordinates")
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("box coordinates must be non-negative")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y_min, self.y_max + 1), slice(self.x_min, self.x_max + 1)

    def region_mask(self, height: int, width: int) -> "BinaryMask":
        bits = np.zeros((height, width), dtype=bool)
        bits[self.slices()] = True
        return BinaryMask(bits)


@dataclass(frozen=True)
class PromptSet:
    """Point, box, and dense-mask cues sent with one decode request."""

    points: Tuple[PointPrompt, ...] = ()
    box: Optional[BoxPrompt] = None
    mask_prompt: Optional[BinaryMask] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points and self.box is None and self.mask_prompt is None:
            raise ValueError("PromptSet requires at least one prompt")


@dataclass(frozen=True)
class MaskProposal:
    """Binary mask plus the backend's confidence score."""

    mask: BinaryMask
    score: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.score) or not (0.0 <= self.score <= 1.0):
            raise ValueError(f"proposal score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class GridSpec:
    """Regular point grid: x = offset + i * spacing, y = offset + j * spacing."""

    points_per_side: int
    offset: float
    spacing: float

    def __post_init__(self) -> None:
        if self.points_per_side < 1:
            raise ValueError("points_per_side must be >= 1")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")


def split_by_class(label_map: LabelMap) -> list[tuple[int, BinaryMask]]:
    """Partition a label map into per-class binary masks.

    Returns one (class_id, mask) pair per distinct non-background,
    non-ignore class, ascending by class ID. An all-background map yields
    an empty list.
    """
    return [
        (cid, BinaryMask(label_map.labels == cid)) for cid in label_map.class_ids()
    ]


def label_map_from_masks(
    pairs: Sequence[tuple[int, BinaryMask]],
    height: int,
    width: int,
    ignore_id: int = DEFAULT_IGNORE_ID,
) -> LabelMap:
    """Reassemble per-class masks into a label map (later pairs win overlaps)."""
    labels = np.zeros((height, width), dtype=np.uint8)
    for cid, mask in pairs:
        if mask.height != height or mask.width != width:
            raise DimensionMismatch("mask dimensions do not match the target map")
        labels[mask.bits] = cid
    return LabelMap(labels, ignore_id)


def _nearest_indices(dst_len: int, src_len: int) -> np.ndarray:
    idx = ((np.arange(dst_len) + 0.5) * src_len / dst_len).astype(np.int64)
    return np.minimum(idx, src_len - 1)


def downsample_mask(mask: BinaryMask, target: tuple[int, int]) -> DownsampledMask:
    """Nearest-neighbor resample of a mask onto a (height_f, width_f) grid."""
    target_h, target_w = target
    if target_h < 1 or target_w < 1:
        raise DimensionMismatch("target dimensions must be >= 1")
    rows = _nearest_indices(target_h, mask.height)
    cols = _nearest_indices(target_w, mask.width)
    return DownsampledMask(mask.bits[np.ix_(rows, cols)])


def save_label_map(label_map: LabelMap, path: Path | str) -> None:
    """Write a label map as a single-channel 8-bit PNG."""
    PILImage.fromarray(label_map.labels, mode="L").save(path, format="PNG")


def load_label_map(path: Path | str, ignore_id: int = DEFAULT_IGNORE_ID) -> LabelMap:
    """Read a single-channel 8-bit PNG label map."""
    with PILImage.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")
        return LabelMap(np.asarray(img), ignore_id)


def save_image(image: Image, path: Path | str) -> None:
    """Write an 8-bit RGB PNG."""
    PILImage.fromarray(image.data, mode="RGB").save(path, format="PNG")


def load_image(path: Path | str) -> Image:
    """Read an 8-bit RGB PNG."""
    with PILImage.open(path) as img:
        if img.mode != "RGB":
            img = img.convert("RGB")
        return Image(np.asarray(img))
