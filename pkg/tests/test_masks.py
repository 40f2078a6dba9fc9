import numpy as np
import pytest

from promptseg import (
    BBox,
    BinaryMask,
    MaskFormatError,
    RleMask,
    decode_rle,
    denormalize_coord,
    encode_rle,
    iou,
    normalize_coord,
    point_in_mask,
    tight_bbox,
)

from oracles import bbox_scan, iou_count, rle_counts_scan
from worldgen import random_mask


def l_shape() -> BinaryMask:
    bits = np.zeros((6, 6), dtype=bool)
    bits[1:5, 2] = True
    bits[4, 2:5] = True
    return BinaryMask(bits)


class TestRle:
    def test_decode_single_run_layout(self):
        mask = decode_rle(RleMask(size=(2, 2), counts=(1, 3)))
        # column-major: pixel 0 off, pixels 1..3 on
        assert not mask.bits[0, 0]
        assert mask.bits[1, 0] and mask.bits[0, 1] and mask.bits[1, 1]

    def test_decode_minimal_all_on(self):
        mask = decode_rle(RleMask(size=(1, 1), counts=(0, 1)))
        assert mask.bits[0, 0]

    def test_encode_all_off(self):
        assert encode_rle(BinaryMask.zeros(2, 2)).counts == (4,)

    def test_encode_all_on_leading_zero(self):
        assert encode_rle(BinaryMask.full(2, 2)).counts == (0, 4)

    def test_encode_checkerboard_matches_scan_oracle(self):
        mask = BinaryMask(np.array([[True, False], [False, True]]))
        assert list(encode_rle(mask).counts) == rle_counts_scan(mask)

    def test_encode_matches_scan_oracle_random(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            mask = random_mask(rng, int(rng.integers(1, 12)), int(rng.integers(1, 12)))
            assert list(encode_rle(mask).counts) == rle_counts_scan(mask)

    def test_round_trip_random(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            w = int(rng.integers(1, 64))
            h = int(rng.integers(1, 64))
            mask = random_mask(rng, w, h, density=float(rng.random()))
            assert decode_rle(encode_rle(mask)) == mask

    def test_sum_mismatch_names_record(self):
        with pytest.raises(MaskFormatError, match="rec-17"):
            decode_rle(RleMask(size=(2, 2), counts=(1, 2)), source="rec-17")

    def test_negative_count_rejected(self):
        with pytest.raises(MaskFormatError):
            decode_rle(RleMask(size=(2, 2), counts=(-1, 5)))

    def test_interior_zero_rejected(self):
        with pytest.raises(MaskFormatError):
            decode_rle(RleMask(size=(2, 2), counts=(2, 0, 2)))


class TestTightBbox:
    def test_single_pixel(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[5, 3] = True
        assert tight_bbox(BinaryMask(bits)) == BBox(3, 5, 3, 5)

    def test_full_frame(self):
        assert tight_bbox(BinaryMask.full(4, 4)) == BBox(0, 0, 3, 3)

    def test_empty_mask_signals_none(self):
        assert tight_bbox(BinaryMask.zeros(4, 4)) is None

    def test_l_shape_matches_scan_oracle(self):
        mask = l_shape()
        assert tight_bbox(mask).as_tuple() == bbox_scan(mask)

    def test_no_smaller_box_contains_all(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            mask = random_mask(rng, 16, 16, density=0.2)
            box = tight_bbox(mask)
            if box is None:
                continue
            ys, xs = np.nonzero(mask.bits)
            # shrinking any side by one must exclude an on-pixel
            assert (xs == box.x1).any() and (xs == box.x2).any()
            assert (ys == box.y1).any() and (ys == box.y2).any()


class TestIou:
    def test_identity(self):
        mask = l_shape()
        assert iou(mask, mask) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = True
        b[3, 3] = True
        assert iou(BinaryMask(a), BinaryMask(b)) == 0.0

    def test_one_shared_pixel_is_third(self):
        a = np.zeros((4, 4), dtype=bool)
        b = np.zeros((4, 4), dtype=bool)
        a[0, 0] = a[0, 1] = True
        b[0, 1] = b[0, 2] = True
        assert iou(BinaryMask(a), BinaryMask(b)) == pytest.approx(1 / 3)

    def test_empty_conventions(self):
        empty = BinaryMask.zeros(4, 4)
        assert iou(empty, empty) == 1.0
        assert iou(empty, BinaryMask.full(4, 4)) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            iou(BinaryMask.zeros(4, 4), BinaryMask.zeros(4, 5))

    def test_symmetric_bounded_matches_count_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            a = random_mask(rng, 9, 7)
            b = random_mask(rng, 9, 7)
            v = iou(a, b)
            assert v == iou(b, a)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(iou_count(a, b))


class TestPointInMask:
    def test_all_on(self):
        assert point_in_mask(BinaryMask.full(4, 4), 2, 3)

    def test_all_off(self):
        assert not point_in_mask(BinaryMask.zeros(4, 4), 2, 3)

    def test_l_shape_matches_direct_lookup(self):
        mask = l_shape()
        for y in range(mask.height):
            for x in range(mask.width):
                assert point_in_mask(mask, x, y) == bool(mask.bits[y, x])

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            point_in_mask(BinaryMask.zeros(4, 4), 4, 0)


class TestCoordGrid:
    def test_origin(self):
        assert normalize_coord(0, 1000) == 0

    def test_last_bin(self):
        assert normalize_coord(999, 1000) == 999

    def test_formula(self):
        assert normalize_coord(333, 640) == 520  # floor(333*1000/640)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            normalize_coord(640, 640)
        with pytest.raises(ValueError):
            normalize_coord(-1, 640)
        with pytest.raises(ValueError):
            denormalize_coord(1000, 640)

    def test_round_trip_same_bin_large_extent(self):
        for extent in (1000, 1001, 1100, 1920, 4096):
            for c in range(1000):
                assert normalize_coord(denormalize_coord(c, extent), extent) == c

    def test_round_trip_same_bin_small_extent(self):
        # extents below the grid leave some bins without a pixel; every bin
        # that a pixel can reach must round-trip exactly
        for extent in (1, 7, 480, 640, 999):
            reachable = {normalize_coord(v, extent) for v in range(extent)}
            for c in reachable:
                assert normalize_coord(denormalize_coord(c, extent), extent) == c

    def test_round_trip_error_bound(self):
        for extent in (480, 1000, 1920):
            bound = -(-extent // 1000)  # ceil
            for v in range(0, extent, 7):
                back = denormalize_coord(normalize_coord(v, extent), extent)
                assert abs(back - v) <= bound


class TestBinaryMaskInvariants:
    def test_from_flat_length_checked(self):
        with pytest.raises(ValueError):
            BinaryMask.from_flat(2, 2, [True, False, True])

    def test_min_size(self):
        with pytest.raises(ValueError):
            BinaryMask(np.zeros((0, 3), dtype=bool))

    def test_bits_are_frozen(self):
        mask = BinaryMask.zeros(2, 2)
        with pytest.raises(ValueError):
            mask.bits[0, 0] = True
