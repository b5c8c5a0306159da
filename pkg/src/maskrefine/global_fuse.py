"""Image-wide proposal generation over a point grid, plus vote-based fusion.

The whole image (and optionally overlapping crops of it) is probed with a
regular grid of single positive points; each decode's best proposal is
translated back to full-image coordinates, low-score and empty masks are
dropped, and greedy NMS dedups the pool. Fusion then walks the surviving
proposals in descending score order and relabels each one's pixels with
the class that wins a majority vote of the underlying label map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .core import (
    BinaryMask,
    BoxPrompt,
    GridSpec,
    Image,
    LabelMap,
    MaskProposal,
    PointPrompt,
    PromptSet,
)
from .errors import DimensionMismatch, NoObject
from .maskops import nms_filter
from .segmenter import DEFAULT_PROPOSALS, DecodeRequest, SegmenterBackend


@dataclass(frozen=True)
class CropBox:
    """One region to probe; layer 0 is the full image."""

    region: BoxPrompt
    layer: int

    def __post_init__(self) -> None:
        if self.layer < 0:
            raise ValueError("layer must be >= 0")


@dataclass(frozen=True)
class GlobalProposalSet:
    """Deduplicated image-resolution proposals, in kept (NMS) order."""

    proposals: Tuple[MaskProposal, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "proposals", tuple(self.proposals))


def _round_half_up(value: float) -> int:
    return math.floor(value + 0.5)


def generate_grid(spec: GridSpec) -> list[tuple[int, int]]:
    """All N^2 grid points, row-major (j outer, i inner), rounded to pixels.

    Rounding is floor(v + 0.5), i.e. halves round up.
    """
    n = spec.points_per_side
    return [
        (_round_half_up(spec.offset + i * spec.spacing),
         _round_half_up(spec.offset + j * spec.spacing))
        for j in range(n)
        for i in range(n)
    ]


def default_grid_spec(side: int, points_per_side: int = 32) -> GridSpec:
    """Spacing side/N with a half-spacing offset, centering the grid."""
    spacing = side / points_per_side
    return GridSpec(points_per_side, spacing / 2.0, spacing)


def generate_crop_boxes(
    width: int, height: int, layers: int, overlap: float
) -> list[CropBox]:
    """Layer 0 is the full image; layer k tiles it 2^k x 2^k with overlap."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if not (0.0 <= overlap < 1.0):
        raise ValueError("overlap must lie in [0, 1)")
    boxes = [CropBox(BoxPrompt(0, 0, width - 1, height - 1), 0)]
    for layer in range(1, layers):
        tiles = 2**layer
        tile_w = min(width, math.ceil(width / tiles * (1.0 + overlap)))
        tile_h = min(height, math.ceil(height / tiles * (1.0 + overlap)))
        for row in range(tiles):
            y0 = min(math.floor(row * height / tiles), height - tile_h)
            for col in range(tiles):
                x0 = min(math.floor(col * width / tiles), width - tile_w)
                boxes.append(
                    CropBox(
                        BoxPrompt(x0, y0, x0 + tile_w - 1, y0 + tile_h - 1), layer
                    )
                )
    return boxes


def image_wide_segment(
    backend: SegmenterBackend,
    image: Image,
    spec: GridSpec,
    crops: Sequence[CropBox],
    min_score: float,
    nms_iou: float,
    proposals_requested: int = DEFAULT_PROPOSALS,
) -> GlobalProposalSet:
    """Probe every crop with the point grid and dedup the pooled proposals.

    Each grid point decodes with a single positive point and no box; the
    highest-scoring proposal of each decode enters the pool. Grid points
    outside a crop are skipped, as are decodes matching no object. Equal
    scores tie-break by (layer, crop row, crop col, grid point index), so
    the result does not depend on the order crops are processed in.
    """
    pooled: list[tuple[tuple, MaskProposal]] = []
    grid = generate_grid(spec)
    for crop in crops:
        sub = image.crop(crop.region)
        features = backend.embed(sub)
        for point_index, (px, py) in enumerate(grid):
            if not (0 <= px < sub.width and 0 <= py < sub.height):
                continue
            try:
                proposals = backend.decode(
                    DecodeRequest(
                        features,
                        PromptSet(points=(PointPrompt(px, py, True),)),
                        proposals_requested,
                    )
                )
            except NoObject:
                continue
            best = max(proposals, key=lambda p: p.score)
            if best.score < min_score or best.mask.is_empty:
                continue
            key = (crop.layer, crop.region.y_min, crop.region.x_min, point_index)
            pooled.append(
                (
                    key,
                    MaskProposal(
                        _uncrop(best.mask, crop.region, image.height, image.width),
                        best.score,
                    ),
                )
            )
    pooled.sort(key=lambda entry: entry[0])
    return GlobalProposalSet(
        tuple(nms_filter([proposal for _, proposal in pooled], nms_iou))
    )


def _uncrop(
    mask: BinaryMask, region: BoxPrompt, height: int, width: int
) -> BinaryMask:
    if (mask.height, mask.width) == (height, width) and region.x_min == 0 and region.y_min == 0:
        return mask
    bits = np.zeros((height, width), dtype=bool)
    bits[
        region.y_min : region.y_min + mask.height,
        region.x_min : region.x_min + mask.width,
    ] = mask.bits
    return BinaryMask(bits)


def category_vote_fuse(
    global_set: GlobalProposalSet, lro_map: LabelMap
) -> LabelMap:
    """Relabel each proposal's pixels with its majority class from lro_map.

    Proposals are processed in descending score order (ties keep set
    order); votes are tallied over the original map, ignoring the ignore
    ID, with vote ties going to the smallest class ID. Pixels already
    claimed by a higher-scoring proposal are left alone, as are pixels no
    proposal covers and the pixels of proposals that overlap no labeled
    pixel.
    """
    labels = lro_map.labels
    out = labels.copy()
    claimed = np.zeros(labels.shape, dtype=bool)
    proposals = global_set.proposals
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    for idx in order:
        mask = proposals[idx].mask
        if (mask.height, mask.width) != (lro_map.height, lro_map.width):
            raise DimensionMismatch("proposal mask does not match the label map")
        votes = labels[mask.bits]
        votes = votes[votes != lro_map.ignore_id]
        if votes.size == 0:
            continue
        winner = int(np.argmax(np.bincount(votes)))
        out[mask.bits & ~claimed] = winner
        claimed |= mask.bits
    return LabelMap(out, lro_map.ignore_id)
