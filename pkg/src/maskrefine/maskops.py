"""Pure geometric mask algorithms: components, boxes, IoU, NMS, boundary bands."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import BinaryMask, BoxPrompt, MaskProposal, PointPrompt
from .errors import DimensionMismatch, EmptyMask

# 4-connectivity: edge neighbors only; 8-connectivity adds diagonals.
_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


@dataclass(frozen=True)
class Component:
    """One connected component of a binary mask."""

    id: int
    pixel_count: int
    mask: BinaryMask
    bbox: BoxPrompt


def mask_bbox(mask: BinaryMask) -> BoxPrompt:
    """Tight bounding box of the set bits (inclusive coordinates)."""
    ys, xs = np.nonzero(mask.bits)
    if ys.size == 0:
        raise EmptyMask("cannot take the bounding box of an empty mask")
    return BoxPrompt(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[Component]:
    """Label connected components, largest first.

    Ties on pixel count break by the smallest (y, x) of each component's
    first set pixel in row-major order.
    """
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    labeled, count = ndimage.label(mask.bits, structure=_STRUCTURES[connectivity])
    if count == 0:
        return []
    flat = labeled.ravel()
    sizes = np.bincount(flat, minlength=count + 1)
    # First row-major occurrence of each label, used as the tie-breaker.
    labels_present, first_index = np.unique(flat, return_index=True)
    firsts = dict(zip(labels_present.tolist(), first_index.tolist()))
    order = sorted(range(1, count + 1), key=lambda lab: (-int(sizes[lab]), firsts[lab]))
    slices = ndimage.find_objects(labeled)
    components = []
    for rank, lab in enumerate(order, start=1):
        ys, xs = slices[lab - 1]
        bbox = BoxPrompt(xs.start, ys.start, xs.stop - 1, ys.stop - 1)
        components.append(
            Component(
                id=rank,
                pixel_count=int(sizes[lab]),
                mask=BinaryMask(labeled == lab),
                bbox=bbox,
            )
        )
    return components


def largest_component_containing(
    mask: BinaryMask, p: PointPrompt, connectivity: int = 8
) -> Component:
    """Component containing p, or the globally largest one if p is off-mask."""
    if mask.is_empty:
        raise EmptyMask("mask has no set bits")
    if not (0 <= p.x < mask.width and 0 <= p.y < mask.height):
        raise ValueError("point lies outside the mask bounds")
    components = connected_components(mask, connectivity)
    if mask.bits[p.y, p.x]:
        for component in components:
            if component.mask.bits[p.y, p.x]:
                return component
    return components[0]


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks count as identical (1.0)."""
    if a.height != b.height or a.width != b.width:
        raise DimensionMismatch("masks must share dimensions")
    intersection = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return intersection / union


def nms_filter(
    proposals: Sequence[MaskProposal], iou_threshold: float
) -> list[MaskProposal]:
    """Greedy non-maximum suppression over mask proposals.

    Proposals are visited by descending score (ties keep input order); one
    is kept iff its IoU with every already-kept proposal is <= the
    threshold.
    """
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    kept: list[MaskProposal] = []
    for i in order:
        candidate = proposals[i]
        if all(mask_iou(candidate.mask, k.mask) <= iou_threshold for k in kept):
            kept.append(candidate)
    return kept


def boundary_pixels(mask: BinaryMask) -> BinaryMask:
    """Set bits with a 4-neighbor that is unset or out of bounds."""
    bits = mask.bits
    padded = np.pad(bits, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return BinaryMask(bits & ~interior)


def boundary_band(mask: BinaryMask, band_px: int) -> BinaryMask:
    """Set bits within band_px pixel layers of the mask boundary.

    band_px counts layers, so band_px=1 is exactly the boundary pixels
    themselves; larger values grow inward by Chebyshev distance. The
    result is always a subset of the input mask.
    """
    if band_px < 1:
        raise ValueError("band_px must be >= 1")
    boundary = boundary_pixels(mask)
    if band_px == 1 or boundary.is_empty:
        return boundary
    # Chebyshev distance from every cell to the nearest boundary pixel.
    distance = ndimage.distance_transform_cdt(~boundary.bits, metric="chessboard")
    return BinaryMask(mask.bits & (distance <= band_px - 1))
