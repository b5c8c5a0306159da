"""Mask geometry against independent oracles: flood fill, brute-force NMS."""
import numpy as np
import pytest

from maskrefine.core import BinaryMask, MaskProposal, PointPrompt
from maskrefine.errors import DimensionMismatch, EmptyMask
from maskrefine.maskops import (
    boundary_band,
    boundary_pixels,
    connected_components,
    largest_component_containing,
    mask_bbox,
    mask_iou,
    nms_filter,
)


def flood_fill_components(bits, connectivity):
    """Oracle: label components with an explicit-stack flood fill."""
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=int)
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]
    next_label = 0
    for y in range(h):
        for x in range(w):
            if bits[y, x] and labels[y, x] == 0:
                next_label += 1
                stack = [(y, x)]
                labels[y, x] = next_label
                while stack:
                    cy, cx = stack.pop()
                    for dy, dx in steps:
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = next_label
                            stack.append((ny, nx))
    return labels, next_label


def reference_nms(proposals, threshold):
    """Oracle: O(n^2) greedy keep-list with a from-scratch IoU."""
    def iou(a, b):
        inter = np.count_nonzero(a & b)
        union = np.count_nonzero(a | b)
        return 1.0 if union == 0 else inter / union

    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    kept = []
    for i in order:
        if all(iou(proposals[i].mask.bits, proposals[j].mask.bits) <= threshold for j in kept):
            kept.append(i)
    return [proposals[i] for i in kept]


def make_mask(coords, width=4, height=4):
    bits = np.zeros((height, width), dtype=bool)
    for x, y in coords:
        bits[y, x] = True
    return BinaryMask(bits)


class TestConnectedComponents:
    def test_two_visible_blobs(self):
        mask = make_mask([(0, 0), (1, 0), (3, 3)])
        comps = connected_components(mask, 4)
        assert [c.pixel_count for c in comps] == [2, 1]
        assert comps[0].id == 1 and comps[1].id == 2

    def test_empty_mask(self):
        assert connected_components(BinaryMask(np.zeros((3, 3), bool))) == []

    def test_diagonal_split_by_connectivity(self):
        mask = make_mask([(0, 0), (1, 1)])
        assert len(connected_components(mask, 4)) == 2
        assert len(connected_components(mask, 8)) == 1

    def test_partition_sums_to_set_bits(self):
        rng = np.random.RandomState(5)
        for _ in range(20):
            bits = rng.rand(16, 16) > 0.6
            comps = connected_components(BinaryMask(bits), 8)
            assert sum(c.pixel_count for c in comps) == np.count_nonzero(bits)

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_flood_fill_oracle(self, connectivity):
        rng = np.random.RandomState(6)
        for _ in range(200):
            bits = rng.rand(32, 32) > rng.uniform(0.4, 0.7)
            comps = connected_components(BinaryMask(bits), connectivity)
            oracle_labels, oracle_count = flood_fill_components(bits, connectivity)
            assert len(comps) == oracle_count
            # Same partition: every component matches one oracle label exactly.
            for comp in comps:
                ys, xs = np.nonzero(comp.mask.bits)
                lab = oracle_labels[ys[0], xs[0]]
                assert (comp.mask.bits == (oracle_labels == lab)).all()
            # Sorted by size, ties by first set pixel.
            keys = []
            for comp in comps:
                flat = np.flatnonzero(comp.mask.bits.ravel())
                keys.append((-comp.pixel_count, flat[0]))
            assert keys == sorted(keys)

    def test_bbox_is_tight(self):
        rng = np.random.RandomState(7)
        for _ in range(30):
            bits = rng.rand(12, 12) > 0.5
            for comp in connected_components(BinaryMask(bits)):
                ys, xs = np.nonzero(comp.mask.bits)
                assert comp.bbox.x_min == xs.min() and comp.bbox.x_max == xs.max()
                assert comp.bbox.y_min == ys.min() and comp.bbox.y_max == ys.max()


class TestLargestComponentContaining:
    def test_point_on_component(self):
        mask = make_mask([(0, 0), (1, 0), (2, 0), (3, 3)])
        comp = largest_component_containing(mask, PointPrompt(1, 0))
        assert comp.pixel_count == 3

    def test_fallback_to_largest(self):
        bits = np.zeros((6, 6), dtype=bool)
        bits[0, :5] = True  # size 5
        bits[5, :2] = True  # size 2
        comp = largest_component_containing(BinaryMask(bits), PointPrompt(3, 3))
        assert comp.pixel_count == 5

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMask):
            largest_component_containing(
                BinaryMask(np.zeros((2, 2), bool)), PointPrompt(0, 0)
            )

    def test_agrees_with_flood_fill_from_point(self):
        rng = np.random.RandomState(8)
        checked = 0
        while checked < 200:
            bits = rng.rand(16, 16) > 0.5
            ys, xs = np.nonzero(bits)
            if ys.size == 0:
                continue
            i = rng.randint(ys.size)
            p = PointPrompt(int(xs[i]), int(ys[i]))
            comp = largest_component_containing(BinaryMask(bits), p, 8)
            labels, _ = flood_fill_components(bits, 8)
            assert (comp.mask.bits == (labels == labels[p.y, p.x])).all()
            checked += 1


class TestMaskIou:
    def test_identical(self):
        mask = make_mask([(0, 0), (1, 1)])
        assert mask_iou(mask, mask) == 1.0

    def test_disjoint(self):
        assert mask_iou(make_mask([(0, 0)]), make_mask([(3, 3)])) == 0.0

    def test_shifted_block(self):
        a = make_mask([(0, 0), (1, 0), (0, 1), (1, 1)])
        b = make_mask([(1, 0), (2, 0), (1, 1), (2, 1)])
        assert mask_iou(a, b) == pytest.approx(2 / 6)

    def test_both_empty_convention(self):
        empty = BinaryMask(np.zeros((3, 3), bool))
        assert mask_iou(empty, empty) == 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mask_iou(make_mask([], 3, 3), make_mask([], 4, 4))

    def test_symmetry(self):
        rng = np.random.RandomState(9)
        for _ in range(50):
            a = BinaryMask(rng.rand(8, 8) > 0.5)
            b = BinaryMask(rng.rand(8, 8) > 0.5)
            assert mask_iou(a, b) == mask_iou(b, a)


class TestNmsFilter:
    def test_duplicate_suppressed(self):
        mask = make_mask([(0, 0), (1, 0)])
        kept = nms_filter(
            [MaskProposal(mask, 0.8), MaskProposal(mask, 0.9)], 0.5
        )
        assert len(kept) == 1 and kept[0].score == 0.9

    def test_disjoint_all_kept(self):
        props = [
            MaskProposal(make_mask([(0, 0)]), 0.5),
            MaskProposal(make_mask([(3, 3)]), 0.4),
        ]
        assert len(nms_filter(props, 0.0)) == 2

    def test_matches_brute_force(self):
        rng = np.random.RandomState(10)
        for _ in range(100):
            n = rng.randint(1, 12)
            props = []
            for _k in range(n):
                bits = rng.rand(10, 10) > rng.uniform(0.3, 0.8)
                props.append(
                    MaskProposal(BinaryMask(bits), float(rng.choice([0.2, 0.5, 0.5, 0.9])))
                )
            threshold = float(rng.uniform(0, 1))
            got = nms_filter(props, threshold)
            expected = reference_nms(props, threshold)
            assert len(got) == len(expected)
            for g, e in zip(got, expected):
                assert g.score == e.score and (g.mask.bits == e.mask.bits).all()

    def test_duplicate_insertion_does_not_change_kept_masks(self):
        rng = np.random.RandomState(12)
        for _ in range(20):
            props = [
                MaskProposal(BinaryMask(rng.rand(8, 8) > 0.5), float(rng.uniform(0.1, 1)))
                for _ in range(5)
            ]
            base = nms_filter(props, 0.6)
            dup = MaskProposal(base[0].mask, base[0].score)
            with_dup = nms_filter(props + [dup], 0.6)
            base_keys = sorted((p.score, p.mask.bits.tobytes()) for p in base)
            dup_keys = sorted((p.score, p.mask.bits.tobytes()) for p in with_dup)
            assert base_keys == dup_keys


class TestBoundaryBand:
    def test_thin_line_band_one_is_identity(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, :] = True
        out = boundary_band(BinaryMask(bits), 1)
        assert (out.bits == bits).all()

    def test_solid_square_band_one_is_ring(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[1:6, 1:6] = True
        out = boundary_band(BinaryMask(bits), 1)
        assert out.pixel_count == 16
        assert not out.bits[3, 3]

    def test_empty_mask(self):
        out = boundary_band(BinaryMask(np.zeros((4, 4), bool)), 2)
        assert out.is_empty

    def test_band_is_subset_and_monotone(self):
        rng = np.random.RandomState(13)
        for _ in range(30):
            mask = BinaryMask(rng.rand(16, 16) > 0.5)
            previous = None
            for band in (1, 2, 3, 16):
                out = boundary_band(mask, band)
                assert not (out.bits & ~mask.bits).any()
                if previous is not None:
                    assert not (previous & ~out.bits).any()
                previous = out.bits
            # A band covering the whole raster returns the mask itself.
            assert (boundary_band(mask, 32).bits == mask.bits).all()

    def test_matches_distance_oracle(self):
        rng = np.random.RandomState(14)
        for _ in range(30):
            bits = rng.rand(12, 12) > 0.4
            mask = BinaryMask(bits)
            band_px = rng.randint(1, 5)
            got = boundary_band(mask, band_px)
            boundary = boundary_pixels(mask).bits
            expected = np.zeros_like(bits)
            bys, bxs = np.nonzero(boundary)
            for y in range(12):
                for x in range(12):
                    if not bits[y, x] or bys.size == 0:
                        continue
                    cheb = np.minimum.reduce(
                        np.maximum(np.abs(bys - y), np.abs(bxs - x))
                    )
                    expected[y, x] = cheb <= band_px - 1
            assert (got.bits == expected).all()


class TestMaskBbox:
    def test_tight_box(self):
        mask = make_mask([(1, 2), (3, 2), (2, 0)])
        box = mask_bbox(mask)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (1, 0, 3, 2)

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            mask_bbox(BinaryMask(np.zeros((2, 2), bool)))
