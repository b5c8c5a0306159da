"""Promptable-segmenter backend contract and a deterministic geometric oracle.

A backend exposes two operations: ``embed`` turns an image into a dense
feature map, and ``decode`` turns (features, prompts) into scored mask
proposals. Both must be deterministic for identical inputs.

The oracle backend is a weights-free test double. It relies on the scene
palette defined here: synthetic scenes paint every object of class k with
a color whose red channel equals k, so the per-pixel class is recoverable
from the image alone. Its embeddings are one-hot class indicators, and its
decode returns the exact mask of the matched object followed by erosions
of it at strictly lower scores (score of proposal k is 1.0 - 0.1 * k,
floored at 0; erosion uses a 4-connected cross, applied cumulatively).
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .core import (
    BinaryMask,
    BoxPrompt,
    FeatureMap,
    Image,
    LabelMap,
    MaskProposal,
    PromptSet,
)
from .errors import DimensionMismatch, NoObject
from .maskops import mask_iou

DEFAULT_PROPOSALS = 3


@dataclass(frozen=True)
class DecodeRequest:
    """One prompted decoding call against a previously embedded image."""

    features: FeatureMap
    prompts: PromptSet
    proposals_requested: int = DEFAULT_PROPOSALS

    def __post_init__(self) -> None:
        if self.proposals_requested < 1:
            raise ValueError("proposals_requested must be >= 1")


class SegmenterBackend(ABC):
    """Contract every segmenter backend implements."""

    name: str = "backend"
    max_concurrent_requests: int = 1

    @abstractmethod
    def embed(self, image: Image) -> FeatureMap:
        """Embed an image into a dense feature map. Deterministic per image."""

    @abstractmethod
    def decode(self, request: DecodeRequest) -> list[MaskProposal]:
        """Decode prompts into proposals_requested scored masks."""


def class_color(class_id: int) -> tuple[int, int, int]:
    """Palette for rendering scenes; the red channel carries the class ID."""
    return (class_id, (class_id * 101 + 97) % 256, (class_id * 179 + 53) % 256)


def render_label_map(label_map: LabelMap) -> Image:
    """Paint each class with its palette color."""
    ids = np.arange(256, dtype=np.uint8)
    lut = np.stack(
        [ids, (ids.astype(np.int64) * 101 + 97) % 256, (ids.astype(np.int64) * 179 + 53) % 256],
        axis=1,
    ).astype(np.uint8)
    return Image(lut[label_map.labels])


def labels_from_image(image: Image) -> np.ndarray:
    """Invert the palette: per-pixel class IDs from the red channel."""
    return image.data[:, :, 0].astype(np.int64)


@dataclass(frozen=True)
class OracleScene:
    """Ground-truth objects plus the palette-rendered image for them."""

    objects: Tuple[Tuple[int, BinaryMask], ...]
    image: Image

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [cid for cid, _ in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object class IDs must be distinct")
        occupied = None
        for _, mask in self.objects:
            if occupied is None:
                occupied = mask.bits.copy()
                continue
            if (occupied & mask.bits).any():
                raise ValueError("object masks must be pairwise disjoint")
            occupied |= mask.bits


class _DerivedScene:
    """Per-feature-map cache of what the oracle reads out of an embedding."""

    def __init__(self, features: FeatureMap):
        stride = int(round(features.stride_to_image))
        grid_labels = np.argmax(features.data, axis=2)
        if stride > 1:
            labels = np.repeat(np.repeat(grid_labels, stride, axis=0), stride, axis=1)
        else:
            labels = grid_labels
        self.labels = labels
        self.height = labels.shape[0]
        self.width = labels.shape[1]
        self.class_masks = {
            int(cid): BinaryMask(labels == cid)
            for cid in np.unique(labels)
            if cid != 0
        }
        self.proposal_memo: dict[tuple[int, int], tuple[MaskProposal, ...]] = {}


_ERODE_STRUCT = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class OracleBackend(SegmenterBackend):
    """Deterministic geometric oracle over palette-rendered scene images.

    feature_stride must evenly divide the image dimensions; the default of
    1 puts the feature grid in one-to-one correspondence with pixels, which
    is what the exact-recovery tests rely on.
    """

    name = "mock"
    max_concurrent_requests = 64

    def __init__(self, feature_stride: int = 1):
        if feature_stride < 1:
            raise ValueError("feature_stride must be >= 1")
        self.feature_stride = feature_stride
        self._derived_cache: dict[int, tuple[FeatureMap, _DerivedScene]] = {}

    def embed(self, image: Image) -> FeatureMap:
        stride = self.feature_stride
        if image.height % stride or image.width % stride:
            raise DimensionMismatch(
                "feature_stride must evenly divide the image dimensions"
            )
        labels = labels_from_image(image)
        if stride > 1:
            # Sample at cell centers, matching the documented cell->pixel map.
            rows = np.minimum(
                ((np.arange(image.height // stride) + 0.5) * stride).astype(np.int64),
                image.height - 1,
            )
            cols = np.minimum(
                ((np.arange(image.width // stride) + 0.5) * stride).astype(np.int64),
                image.width - 1,
            )
            labels = labels[np.ix_(rows, cols)]
        channels = int(labels.max()) + 1
        data = np.eye(channels, dtype=np.float32)[labels]
        return FeatureMap(data, float(stride))

    def _derived(self, features: FeatureMap) -> _DerivedScene:
        key = id(features)
        hit = self._derived_cache.get(key)
        if hit is not None and hit[0] is features:
            return hit[1]
        derived = _DerivedScene(features)
        if len(self._derived_cache) >= 8:
            self._derived_cache.pop(next(iter(self._derived_cache)))
        self._derived_cache[key] = (features, derived)
        return derived

    def decode(self, request: DecodeRequest) -> list[MaskProposal]:
        derived = self._derived(request.features)
        prompts = request.prompts
        vetoed = set()
        for p in prompts.points:
            if p.positive:
                continue
            if 0 <= p.x < derived.width and 0 <= p.y < derived.height:
                cid = int(derived.labels[p.y, p.x])
                if cid != 0:
                    vetoed.add(cid)
        target = self._match_object(derived, prompts, vetoed)
        memo_key = (target, request.proposals_requested)
        cached = derived.proposal_memo.get(memo_key)
        if cached is None:
            cached = self._build_proposals(
                derived.class_masks[target], request.proposals_requested
            )
            derived.proposal_memo[memo_key] = cached
        return list(cached)

    def _match_object(
        self, derived: _DerivedScene, prompts: PromptSet, vetoed: set[int]
    ) -> int:
        for p in prompts.points:
            if not p.positive:
                continue
            if not (0 <= p.x < derived.width and 0 <= p.y < derived.height):
                continue
            cid = int(derived.labels[p.y, p.x])
            if cid != 0 and cid not in vetoed:
                return cid
        if prompts.box is not None:
            region = prompts.box.region_mask(derived.height, derived.width)
            best_id, best_iou = 0, 0.0
            for cid in sorted(derived.class_masks):
                if cid in vetoed:
                    continue
                iou = mask_iou(derived.class_masks[cid], region)
                if iou > best_iou:
                    best_id, best_iou = cid, iou
            if best_iou > 0.0:
                return best_id
        raise NoObject("no object matches the given prompts")

    @staticmethod
    def _build_proposals(mask: BinaryMask, count: int) -> tuple[MaskProposal, ...]:
        proposals = [MaskProposal(mask, 1.0)]
        bits = mask.bits
        for k in range(1, count):
            bits = ndimage.binary_erosion(bits, structure=_ERODE_STRUCT)
            proposals.append(
                MaskProposal(BinaryMask(bits), max(0.0, 1.0 - 0.1 * k))
            )
        return tuple(proposals)
