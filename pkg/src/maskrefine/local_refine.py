"""Per-object refinement: confidence-map prompts plus two-step cascaded decoding.

Given one coarse class mask, this stage embeds the image, averages cosine
similarity between every feature cell and the foreground feature vectors
into a confidence map, picks the best/worst cells as positive/negative
point prompts, boxes the largest connected component of the coarse mask
around the positive point, and then decodes twice: once with points+box,
and once more with the first-step mask re-entering as a dense prompt
alongside its own bounding box.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    BinaryMask,
    BoxPrompt,
    ConfidenceMap,
    DownsampledMask,
    FeatureMap,
    ForegroundFeatureSet,
    Image,
    MaskProposal,
    PointPrompt,
    PromptSet,
    downsample_mask,
)
from .errors import DimensionMismatch, EmptyForeground, EmptyMask, EmptyProposal
from .maskops import largest_component_containing, mask_bbox
from .segmenter import DEFAULT_PROPOSALS, DecodeRequest, SegmenterBackend


@dataclass(frozen=True)
class ObjectPrompts:
    """Derived prompts for one object, plus the map they came from.

    degenerate marks the constant-confidence-map case, the only one in
    which the positive and negative points are allowed to coincide.
    """

    p_pos: PointPrompt
    p_neg: PointPrompt
    box: BoxPrompt
    confidence: ConfidenceMap
    degenerate: bool = False

    def __post_init__(self) -> None:
        if (
            not self.degenerate
            and self.p_pos.x == self.p_neg.x
            and self.p_pos.y == self.p_neg.y
        ):
            raise ValueError("p_pos may equal p_neg only for a constant map")


@dataclass(frozen=True)
class RefinementResult:
    """Output of the two-step cascade for one class."""

    class_id: int
    first_step: MaskProposal
    final: MaskProposal
    degraded: bool = False


def crop_foreground(
    features: FeatureMap, mask: DownsampledMask
) -> ForegroundFeatureSet:
    """Gather the feature vectors under the set bits, row-major order."""
    if (mask.height_f, mask.width_f) != (features.height_f, features.width_f):
        raise DimensionMismatch("mask grid does not match the feature grid")
    return ForegroundFeatureSet(features.data[mask.bits])


def build_confidence_map(
    features: FeatureMap, fg: ForegroundFeatureSet
) -> ConfidenceMap:
    """Mean cosine similarity between each cell and the foreground vectors.

    Zero-norm vectors have similarity 0 to everything, so an all-zero
    foreground vector contributes nothing and an all-zero cell scores 0.
    """
    if fg.count == 0:
        raise EmptyForeground("foreground feature set is empty")
    if fg.channels != features.channels:
        raise DimensionMismatch("channel counts differ")
    grid = features.data.astype(np.float64)
    grid_norms = np.linalg.norm(grid, axis=2, keepdims=True)
    grid_unit = np.divide(grid, grid_norms, out=np.zeros_like(grid), where=grid_norms > 0)
    vecs = fg.vectors.astype(np.float64)
    vec_norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    vec_unit = np.divide(vecs, vec_norms, out=np.zeros_like(vecs), where=vec_norms > 0)
    # Mean of cosines == dot with the mean of the unit foreground vectors.
    mean_unit = vec_unit.mean(axis=0)
    return ConfidenceMap(grid_unit @ mean_unit)


def cell_to_pixel(cell_x: int, cell_y: int, stride: float) -> tuple[int, int]:
    """Map a feature cell to the image pixel under its center."""
    return (int((cell_x + 0.5) * stride), int((cell_y + 0.5) * stride))


def select_points(
    conf: ConfidenceMap,
    stride: float,
    bounds: Optional[tuple[int, int]] = None,
) -> tuple[PointPrompt, PointPrompt]:
    """Positive point at the argmax cell, negative at the argmin cell.

    Ties break at the smallest row-major index. bounds, when given as
    (width, height), clamps the mapped pixels inside the image.
    """
    flat = conf.values.ravel()
    max_idx = int(np.argmax(flat))
    min_idx = int(np.argmin(flat))
    points = []
    for idx, positive in ((max_idx, True), (min_idx, False)):
        cy, cx = divmod(idx, conf.width_f)
        x, y = cell_to_pixel(cx, cy, stride)
        if bounds is not None:
            x = min(x, bounds[0] - 1)
            y = min(y, bounds[1] - 1)
        points.append(PointPrompt(x, y, positive))
    return points[0], points[1]


def select_box(
    coarse: BinaryMask, p_pos: PointPrompt, connectivity: int = 8
) -> BoxPrompt:
    """Tight box of the coarse component containing the positive point.

    Falls back to the globally largest component when the point misses
    the mask entirely.
    """
    return largest_component_containing(coarse, p_pos, connectivity).bbox


def _best(proposals: list[MaskProposal]) -> MaskProposal:
    return max(proposals, key=lambda p: p.score)


def cascaded_refine(
    backend: SegmenterBackend,
    features: FeatureMap,
    prompts: ObjectPrompts,
    coarse: BinaryMask,
    class_id: int = 0,
    proposals_requested: int = DEFAULT_PROPOSALS,
) -> RefinementResult:
    """Two-step decode: points+box first, then the winner as a dense prompt.

    If the first step yields an empty best mask, the coarse mask is
    returned unchanged and the result is flagged degraded (a single decode
    call is issued in that case).
    """
    step1 = backend.decode(
        DecodeRequest(
            features,
            PromptSet(points=(prompts.p_pos, prompts.p_neg), box=prompts.box),
            proposals_requested,
        )
    )
    first = _best(step1)
    if first.mask.is_empty:
        return RefinementResult(
            class_id, first, MaskProposal(coarse, 0.0), degraded=True
        )
    step2 = backend.decode(
        DecodeRequest(
            features,
            PromptSet(
                points=(prompts.p_pos, prompts.p_neg),
                box=mask_bbox(first.mask),
                mask_prompt=first.mask,
            ),
            proposals_requested,
        )
    )
    if all(p.mask.is_empty for p in step2):
        raise EmptyProposal("every second-step proposal was empty")
    return RefinementResult(class_id, first, _best(step2))


def derive_prompts(
    features: FeatureMap,
    coarse: BinaryMask,
    bounds: Optional[tuple[int, int]] = None,
    connectivity: int = 8,
) -> ObjectPrompts:
    """Confidence map -> point pair -> component box, in one step."""
    if coarse.is_empty:
        raise EmptyMask("coarse class mask is empty")
    grid = downsample_mask(coarse, (features.height_f, features.width_f))
    fg = crop_foreground(features, grid)
    conf = build_confidence_map(features, fg)
    degenerate = bool(np.ptp(conf.values) == 0.0)
    p_pos, p_neg = select_points(conf, features.stride_to_image, bounds)
    box = select_box(coarse, p_pos, connectivity)
    return ObjectPrompts(p_pos, p_neg, box, conf, degenerate)


def refine_object(
    backend: SegmenterBackend,
    image: Image,
    coarse_class_mask: BinaryMask,
    class_id: int = 0,
    connectivity: int = 8,
    proposals_requested: int = DEFAULT_PROPOSALS,
) -> RefinementResult:
    """End-to-end refinement of one class mask against one image."""
    if coarse_class_mask.is_empty:
        raise EmptyMask("coarse class mask is empty")
    if (coarse_class_mask.height, coarse_class_mask.width) != (
        image.height,
        image.width,
    ):
        raise DimensionMismatch("coarse mask does not match the image")
    features = backend.embed(image)
    prompts = derive_prompts(
        features,
        coarse_class_mask,
        bounds=(image.width, image.height),
        connectivity=connectivity,
    )
    return cascaded_refine(
        backend,
        features,
        prompts,
        coarse_class_mask,
        class_id=class_id,
        proposals_requested=proposals_requested,
    )
