"""Binary masks, boxes and labeled points: the geometry vocabulary of the toolkit.

All types are immutable values; all operations are pure functions, so they can
be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Discrete text-coordinate grid per axis. Serialized coordinates live on
# [0, COORD_BINS), independent of image resolution.
COORD_BINS = 1000


class MaskFormatError(ValueError):
    """An encoded mask record is malformed (bad counts, size mismatch...)."""


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Dense boolean pixel grid, indexed bits[y, x]."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.bits, dtype=bool))
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be at least 1x1, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, bits) -> "BinaryMask":
        """Build from a row-major flat bit sequence of length width*height."""
        flat = np.asarray(bits, dtype=bool).ravel()
        if flat.size != width * height:
            raise ValueError(
                f"expected {width * height} bits for {width}x{height}, got {flat.size}"
            )
        return cls(flat.reshape(height, width))

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(
            np.array_equal(self.bits, other.bits)
        )

    __hash__ = None  # mutable-sized payload; not meant for dict keys

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded mask: column-major runs, first count is background."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def to_json(self) -> dict:
        return {"size": [self.size[0], self.size[1]], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict, source: str = "") -> "RleMask":
        try:
            h, w = obj["size"]
            counts = tuple(int(c) for c in obj["counts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskFormatError(f"bad RLE object {_tag(source)}: {exc}") from exc
        return cls(size=(int(h), int(w)), counts=counts)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned pixel box with inclusive corners."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x1 < 0 or self.y1 < 0 or self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"invalid box corners {self.as_tuple()}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    def contains(self, x: int, y: int) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2

    def validate_within(self, width: int, height: int) -> "BBox":
        if self.x2 >= width or self.y2 >= height:
            raise ValueError(
                f"box {self.as_tuple()} exceeds image bounds {width}x{height}"
            )
        return self

    def dilated(self, frac: float, width: int, height: int) -> "BBox":
        """Box grown by `frac` of its span per side, clamped to the image."""
        pad_x = int(np.ceil(frac * self.width))
        pad_y = int(np.ceil(frac * self.height))
        return BBox(
            max(0, self.x1 - pad_x),
            max(0, self.y1 - pad_y),
            min(width - 1, self.x2 + pad_x),
            min(height - 1, self.y2 + pad_y),
        )


@dataclass(frozen=True)
class LabeledPoint:
    """A pixel coordinate asserted to lie on (positive) or off the target mask."""

    x: int
    y: int
    positive: bool


def _tag(source: str) -> str:
    return f"({source})" if source else ""


def decode_rle(rle: RleMask, source: str = "") -> BinaryMask:
    """Expand column-major runs into a dense mask.

    `source` is only used to name the offending record in error messages.
    """
    h, w = rle.size
    if h < 1 or w < 1:
        raise MaskFormatError(f"bad RLE size {rle.size} {_tag(source)}")
    counts = np.asarray(rle.counts, dtype=np.int64)
    if counts.size and (counts < 0).any():
        raise MaskFormatError(f"negative run length in RLE {_tag(source)}")
    if counts[1:].size and (counts[1:] == 0).any():
        raise MaskFormatError(f"zero-length interior run in RLE {_tag(source)}")
    total = int(counts.sum())
    if total != h * w:
        raise MaskFormatError(
            f"RLE counts sum to {total}, expected {h * w} for size {h}x{w} {_tag(source)}"
        )
    values = np.arange(counts.size, dtype=np.int64) % 2 == 1  # runs alternate off/on
    flat = np.repeat(values, counts)
    return BinaryMask(flat.reshape((h, w), order="F"))


def encode_rle(mask: BinaryMask) -> RleMask:
    """Encode a mask as column-major runs; a leading 0 marks an on-pixel start."""
    flat = mask.bits.ravel(order="F")
    padded = np.concatenate(([-1], flat.astype(np.int8), [-1]))
    edges = np.flatnonzero(np.diff(padded))
    runs = np.diff(edges)
    counts = runs.tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(size=(mask.height, mask.width), counts=tuple(int(c) for c in counts))


def tight_bbox(mask: BinaryMask) -> BBox | None:
    """Minimal box containing every on-pixel, or None for an empty mask."""
    ys, xs = np.nonzero(mask.bits)
    if xs.size == 0:
        return None
    return BBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    if a.bits.shape != b.bits.shape:
        raise ValueError(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    return inter / union


def point_in_mask(mask: BinaryMask, x: int, y: int) -> bool:
    if not (0 <= x < mask.width and 0 <= y < mask.height):
        raise ValueError(
            f"point ({x},{y}) outside {mask.width}x{mask.height} mask"
        )
    return bool(mask.bits[y, x])


def normalize_coord(v: int, extent: int, bins: int = COORD_BINS) -> int:
    """Map pixel v in [0, extent) onto the discrete [0, bins) text grid."""
    if not 0 <= v < extent:
        raise ValueError(f"coordinate {v} outside [0, {extent})")
    return (v * bins) // extent


def denormalize_coord(c: int, extent: int, bins: int = COORD_BINS) -> int:
    """Center pixel of grid bin c; snaps to the nearest pixel when the bin
    holds no pixel center (extent < bins)."""
    if not 0 <= c < bins:
        raise ValueError(f"grid coordinate {c} outside [0, {bins})")
    lo = -((-c * extent) // bins)  # ceil(c*extent/bins)
    hi = -((-(c + 1) * extent) // bins) - 1  # last pixel strictly below the next bin
    if lo > hi:
        return min(max(lo, 0), extent - 1)
    return (lo + hi) // 2


def union_masks(masks: Sequence[BinaryMask], width: int, height: int) -> BinaryMask:
    """Pixelwise OR of masks; the empty sequence gives an all-off mask."""
    acc = np.zeros((height, width), dtype=bool)
    for m in masks:
        if m.bits.shape != acc.shape:
            raise ValueError("union over masks of differing dimensions")
        acc |= m.bits
    return BinaryMask(acc)
