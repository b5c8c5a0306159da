"""Deterministic synthetic scenes: geometric objects with controlled corruption.

Scenes are generated from a 64-bit mixing generator (splitmix-style, see
SplitMix64 below) rather than any runtime's default RNG, so identical
(seed, spec) inputs produce bit-identical fixtures in any implementation
of the same constants. Objects are pairwise disjoint with at least 2 px
separation and a 3 px border margin; object k carries class ID k; the
rendered image uses the scene palette (class ID in the red channel).

Corruption mimics a coarse upstream segmenter: per class, the ground-truth
mask is dilated (claiming only background pixels), eroded, salted with
boundary noise, and optionally bitten by a dropped fragment. Two guards
keep fixtures inside the regime the refiner assumes: every corrupted mask
retains at least one true-object pixel, and more of its pixels lie on the
object than off it (excess off-object pixels are trimmed farthest-first).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import BinaryMask, Image, LabelMap
from .errors import PlacementFailure
from .segmenter import OracleScene, render_label_map

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

BORDER_MARGIN = 3
SEPARATION_PX = 2
_PLACEMENT_RETRIES = 200


class SplitMix64:
    """64-bit mixing generator with the standard splitmix constants."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via the multiply-shift reduction."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], inclusive."""
        return lo + self.next_below(hi - lo + 1)

    def next_float(self) -> float:
        return (self.next_u64() >> 11) * (2.0**-53)

    def chance(self, p: float) -> bool:
        return self.next_float() < p


@dataclass(frozen=True)
class CorruptionSpec:
    """How far the coarse input strays from the ground truth."""

    dilate_px: int = 0
    erode_px: int = 0
    boundary_noise_prob: float = 0.0
    drop_fragment_prob: float = 0.0

    def is_identity(self) -> bool:
        return (
            self.dilate_px == 0
            and self.erode_px == 0
            and self.boundary_noise_prob == 0.0
            and self.drop_fragment_prob == 0.0
        )


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int = 128
    height: int = 128
    object_count: int = 1
    shape_kinds: Tuple[str, ...] = ("disk", "rectangle", "blob")
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)

    def __post_init__(self) -> None:
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        if self.width < 32 or self.height < 32:
            raise ValueError("canvas must be at least 32x32")
        for kind in self.shape_kinds:
            if kind not in ("disk", "rectangle", "blob"):
                raise ValueError(f"unknown shape kind {kind!r}")


def _disk_bits(height, width, cx, cy, radius) -> np.ndarray:
    ys, xs = np.ogrid[:height, :width]
    return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius


def _size_range(side: int, lo_frac: float, hi_frac: float, lo_min: int, hi_cap: int):
    lo = max(lo_min, round(side * lo_frac))
    hi = min(hi_cap, max(lo, round(side * hi_frac)))
    return lo, hi


def _make_disk(rng: SplitMix64, width: int, height: int) -> Optional[np.ndarray]:
    side = min(width, height)
    lo, hi = _size_range(side, 0.085, 0.14, 8, 18)
    if side - 2 * BORDER_MARGIN < 2 * lo + 2:
        return None
    radius = rng.randint(lo, hi)
    lo_x, hi_x = BORDER_MARGIN + radius, width - 1 - BORDER_MARGIN - radius
    lo_y, hi_y = BORDER_MARGIN + radius, height - 1 - BORDER_MARGIN - radius
    if lo_x > hi_x or lo_y > hi_y:
        return None
    cx, cy = rng.randint(lo_x, hi_x), rng.randint(lo_y, hi_y)
    return _disk_bits(height, width, cx, cy, radius)


def _make_rectangle(rng: SplitMix64, width: int, height: int) -> Optional[np.ndarray]:
    side = min(width, height)
    lo, hi = _size_range(side, 0.17, 0.28, 14, 36)
    max_w = min(hi, width - 2 * BORDER_MARGIN)
    max_h = min(hi, height - 2 * BORDER_MARGIN)
    if max_w < lo or max_h < lo:
        return None
    rw = rng.randint(lo, max_w)
    rh = rng.randint(lo, max_h)
    hi_x, hi_y = width - BORDER_MARGIN - rw, height - BORDER_MARGIN - rh
    if hi_x < BORDER_MARGIN or hi_y < BORDER_MARGIN:
        return None
    x0, y0 = rng.randint(BORDER_MARGIN, hi_x), rng.randint(BORDER_MARGIN, hi_y)
    bits = np.zeros((height, width), dtype=bool)
    bits[y0 : y0 + rh, x0 : x0 + rw] = True
    return bits


def _make_blob(rng: SplitMix64, width: int, height: int) -> Optional[np.ndarray]:
    lo, hi = _size_range(min(width, height), 0.078, 0.11, 8, 14)
    base = rng.randint(lo, hi)
    lo_x, hi_x = BORDER_MARGIN + base, width - 1 - BORDER_MARGIN - base
    lo_y, hi_y = BORDER_MARGIN + base, height - 1 - BORDER_MARGIN - base
    if lo_x > hi_x or lo_y > hi_y:
        return None
    cx, cy = rng.randint(lo_x, hi_x), rng.randint(lo_y, hi_y)
    bits = _disk_bits(height, width, cx, cy, base)
    radius = base
    for _ in range(rng.randint(2, 3)):
        # Keep each center inside the previous disk so the union stays connected.
        step = max(2, radius - 2)
        cx += rng.randint(-step, step)
        cy += rng.randint(-step, step)
        radius = rng.randint(7, base)
        if not (
            BORDER_MARGIN + radius <= cx < width - BORDER_MARGIN - radius
            and BORDER_MARGIN + radius <= cy < height - BORDER_MARGIN - radius
        ):
            return None
        bits = bits | _disk_bits(height, width, cx, cy, radius)
    return bits


_SHAPE_MAKERS = {
    "disk": _make_disk,
    "rectangle": _make_rectangle,
    "blob": _make_blob,
}

_SEP_STRUCT = np.ones(
    (2 * SEPARATION_PX + 1, 2 * SEPARATION_PX + 1), dtype=bool
)


def _place_objects(spec: SceneSpec, rng: SplitMix64) -> np.ndarray:
    labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
    blocked = np.zeros((spec.height, spec.width), dtype=bool)
    for class_id in range(1, spec.object_count + 1):
        for _ in range(_PLACEMENT_RETRIES):
            kind = spec.shape_kinds[rng.next_below(len(spec.shape_kinds))]
            bits = _SHAPE_MAKERS[kind](rng, spec.width, spec.height)
            if bits is None or (bits & blocked).any():
                continue
            labels[bits] = class_id
            blocked |= ndimage.binary_dilation(bits, structure=_SEP_STRUCT)
            break
        else:
            raise PlacementFailure(
                f"could not place object {class_id} after {_PLACEMENT_RETRIES} tries"
            )
    return labels


def _distance_to(mask: np.ndarray) -> np.ndarray:
    """Euclidean distance from every pixel to the nearest set pixel."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask)


def _corrupt_class(
    gt_mask: np.ndarray,
    bg_available: np.ndarray,
    corruption: CorruptionSpec,
    rng: SplitMix64,
) -> np.ndarray:
    m = gt_mask.copy()
    dilation_zone = np.zeros_like(m)
    if corruption.dilate_px > 0:
        dist_out = _distance_to(gt_mask)
        dilation_zone = bg_available & (dist_out <= corruption.dilate_px) & ~gt_mask
        m = m | dilation_zone
    if corruption.erode_px > 0:
        depth = ndimage.distance_transform_edt(m)
        m = m & (depth > corruption.erode_px)
    if corruption.boundary_noise_prob > 0:
        edge = m & ~ndimage.binary_erosion(m)
        allowed_add = (gt_mask | dilation_zone) & ~m
        near = ndimage.binary_dilation(m, structure=np.ones((3, 3), dtype=bool))
        candidates = edge | (allowed_add & near)
        for y, x in np.argwhere(candidates):
            if rng.chance(corruption.boundary_noise_prob):
                m[y, x] = not m[y, x]
    if corruption.drop_fragment_prob > 0 and rng.chance(
        corruption.drop_fragment_prob
    ):
        edge_pts = np.argwhere(m & ~ndimage.binary_erosion(m))
        if edge_pts.size:
            y, x = edge_pts[rng.next_below(len(edge_pts))]
            bite = _disk_bits(m.shape[0], m.shape[1], int(x), int(y), 3)
            m = m & ~bite
    # Guard 1: the mask keeps at least one true-object pixel.
    if not (m & gt_mask).any():
        ys, xs = np.nonzero(gt_mask)
        m[ys[0], xs[0]] = True
    # Guard 2: on-object pixels outnumber off-object ones (trim farthest-first).
    excess = int(np.count_nonzero(m & ~gt_mask)) - int(
        np.count_nonzero(m & gt_mask)
    ) + 1
    if excess > 0:
        off = np.argwhere(m & ~gt_mask)
        dist_out = _distance_to(gt_mask)
        keys = sorted(
            range(len(off)),
            key=lambda i: (-dist_out[off[i][0], off[i][1]], off[i][0], off[i][1]),
        )
        for i in keys[:excess]:
            m[off[i][0], off[i][1]] = False
    return m


def generate_scene(
    spec: SceneSpec,
) -> tuple[Image, LabelMap, LabelMap, OracleScene]:
    """Build (image, ground truth, corrupted coarse input, oracle scene)."""
    rng = SplitMix64(spec.seed)
    labels = _place_objects(spec, rng)
    gt = LabelMap(labels)
    if spec.corruption.is_identity():
        coarse = LabelMap(labels.copy())
    else:
        coarse_labels = np.zeros_like(labels)
        bg_available = labels == 0
        for class_id in range(1, spec.object_count + 1):
            m = _corrupt_class(
                labels == class_id, bg_available, spec.corruption, rng
            )
            coarse_labels[m] = class_id
            bg_available &= ~m
        coarse = LabelMap(coarse_labels)
    image = render_label_map(gt)
    scene = OracleScene(
        objects=tuple(
            (cid, BinaryMask(labels == cid))
            for cid in range(1, spec.object_count + 1)
        ),
        image=image,
    )
    return image, gt, coarse, scene
