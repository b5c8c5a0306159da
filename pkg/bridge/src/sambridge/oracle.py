"""Weights-free conformance model with deterministic geometric semantics.

Mirrors the behavior the pipeline's in-process mock backend documents, so
protocol-level tests can compare the two bit for bit:

- Scene images carry the per-pixel class ID in the red channel.
- Embeddings are one-hot class indicators (float32) at stride 1.
- Decoding matches the object containing the first in-bounds positive
  point (background and vetoed classes excluded); failing that, the
  non-vetoed class whose mask has the highest IoU with the filled box
  region (ties to the smallest class ID, zero IoU matches nothing).
  Negative points veto the objects containing them.
- Proposal k is the matched mask eroded k times with a 4-connected cross,
  at score max(0, 1 - 0.1k).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage


class NoObjectMatch(Exception):
    """No object satisfies the prompt set."""


_ERODE_STRUCT = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class Proposal:
    mask: np.ndarray  # (H, W) bool
    score: float


class OracleModel:
    """Stub model: embed + decode over palette-rendered images."""

    stride = 1.0

    def embed(self, image: np.ndarray) -> np.ndarray:
        """One-hot features, shape (H, W, max_class+1), float32."""
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError("image must have shape (H, W, 3)")
        labels = image[:, :, 0].astype(np.int64)
        channels = int(labels.max()) + 1
        return np.eye(channels, dtype=np.float32)[labels]

    def decode(
        self,
        features: np.ndarray,
        points: Sequence[tuple[int, int, bool]],
        box: Optional[tuple[int, int, int, int]],
        mask_prompt: Optional[np.ndarray],
        proposals_requested: int,
    ) -> list[Proposal]:
        labels = np.argmax(features, axis=2)
        height, width = labels.shape
        vetoed = set()
        for x, y, positive in points:
            if positive:
                continue
            if 0 <= x < width and 0 <= y < height:
                cid = int(labels[y, x])
                if cid != 0:
                    vetoed.add(cid)
        target = 0
        for x, y, positive in points:
            if not positive or not (0 <= x < width and 0 <= y < height):
                continue
            cid = int(labels[y, x])
            if cid != 0 and cid not in vetoed:
                target = cid
                break
        if target == 0 and box is not None:
            x0, y0, x1, y1 = box
            region = np.zeros((height, width), dtype=bool)
            region[max(0, y0) : y1 + 1, max(0, x0) : x1 + 1] = True
            best_iou = 0.0
            for cid in sorted(int(c) for c in np.unique(labels) if c != 0):
                if cid in vetoed:
                    continue
                mask = labels == cid
                union = np.count_nonzero(mask | region)
                iou = np.count_nonzero(mask & region) / union if union else 0.0
                if iou > best_iou:
                    best_iou, target = iou, cid
        if target == 0:
            raise NoObjectMatch("no object matches the given prompts")
        bits = labels == target
        proposals = [Proposal(bits, 1.0)]
        for k in range(1, proposals_requested):
            bits = ndimage.binary_erosion(bits, structure=_ERODE_STRUCT)
            proposals.append(Proposal(bits, max(0.0, 1.0 - 0.1 * k)))
        return proposals
