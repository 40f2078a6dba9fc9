"""Point-selection procedures: training group sampling, segmenter-scored
ranking, membership-query point sampling, inference grids, and confidence
filtering.

Every stochastic routine takes an explicit numpy Generator and is a pure
function of (inputs, stream state), so fixed seeds reproduce bitwise across
runs and worker counts.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .codec import PointAnswer, SamPrompt
from .masks import BBox, BinaryMask, LabeledPoint, point_in_mask
from .segmenter import SegmenterError, SegmentRequest, Segmenter


class NoNegativeCandidates(RuntimeError):
    """Every pixel of the image is on-mask; no negative point can exist."""


@dataclass(frozen=True)
class PointGroup:
    """n1 on-mask points plus n2 off-mask points, sampled as one unit."""

    positives: tuple[tuple[int, int], ...]
    negatives: tuple[tuple[int, int], ...]

    def labeled_points(self) -> tuple[LabeledPoint, ...]:
        pos = tuple(LabeledPoint(x, y, True) for x, y in self.positives)
        neg = tuple(LabeledPoint(x, y, False) for x, y in self.negatives)
        return pos + neg


@dataclass(frozen=True)
class RankedGroup:
    group: PointGroup
    iou: float
    error: str | None = None  # set when the segmenter call failed


@dataclass
class SamplingConfig:
    K: int = 64  # candidate groups sampled per target
    keep: int = 16  # best groups retained after segmenter scoring
    k: int = 1  # groups actually emitted into the record
    n1: int = 2  # positive points per group
    n2: int = 1  # negative points per group
    pqpp_train_points: int = 10
    grid_rows: int = 5
    grid_cols: int = 5
    confidence_threshold: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.k <= self.keep <= self.K):
            raise ValueError(
                f"need 1 <= k <= keep <= K, got k={self.k} keep={self.keep} K={self.K}"
            )
        if self.n1 < 1 or self.n2 < 0:
            raise ValueError(f"need n1 >= 1 and n2 >= 0, got {self.n1}, {self.n2}")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0,1]")
        if self.pqpp_train_points < 1:
            raise ValueError("pqpp_train_points must be >= 1")

    @classmethod
    def from_mapping(cls, mapping) -> "SamplingConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in mapping:
                cast = float if f.name == "confidence_threshold" else int
                kwargs[f.name] = cast(mapping[f.name])
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def derive_rng(seed: int, sample_id: str, stream: str = "") -> np.random.Generator:
    """Per-sample generator from (global seed, sample id, stream label).

    Hash-based derivation keeps streams independent of worker count and
    processing order.
    """
    digest = hashlib.sha256(f"{stream}:{sample_id}".encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.default_rng(ss)


def _candidates_in_box(bits: np.ndarray, box: BBox) -> np.ndarray:
    """Row-major (y, x) index pairs of True cells inside the box."""
    sub = bits[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1]
    ys, xs = np.nonzero(sub)
    return np.stack([xs + box.x1, ys + box.y1], axis=1) if ys.size else np.empty((0, 2), dtype=np.int64)


def _negative_candidates(mask: BinaryMask, box: BBox) -> np.ndarray:
    """Off-mask pixels: in-box first, then a 10%-dilated box, then image-wide."""
    off = ~mask.bits
    cands = _candidates_in_box(off, box)
    if cands.shape[0]:
        return cands
    dilated = box.dilated(0.10, mask.width, mask.height)
    cands = _candidates_in_box(off, dilated)
    if cands.shape[0]:
        return cands
    full = BBox(0, 0, mask.width - 1, mask.height - 1)
    cands = _candidates_in_box(off, full)
    if cands.shape[0]:
        return cands
    raise NoNegativeCandidates("mask covers the whole image")


def sample_point_groups(
    mask: BinaryMask, box: BBox, cfg: SamplingConfig, rng: np.random.Generator
) -> list[PointGroup]:
    """K groups of n1 on-mask + n2 off-mask points, uniform over pixel centers.

    Groups are drawn sequentially, so the first K groups of a longer run are
    identical to a shorter run from the same stream state.
    """
    pos_cands = _candidates_in_box(mask.bits, box)
    if pos_cands.shape[0] == 0:
        raise ValueError("mask has no on-pixel inside the sampling box")
    neg_cands = _negative_candidates(mask, box) if cfg.n2 > 0 else None

    groups = []
    for _ in range(cfg.K):
        pi = rng.integers(0, pos_cands.shape[0], size=cfg.n1)
        positives = tuple((int(x), int(y)) for x, y in pos_cands[pi])
        if cfg.n2 > 0:
            ni = rng.integers(0, neg_cands.shape[0], size=cfg.n2)
            negatives = tuple((int(x), int(y)) for x, y in neg_cands[ni])
        else:
            negatives = ()
        groups.append(PointGroup(positives=positives, negatives=negatives))
    return groups


def rank_groups(
    groups,
    box: BBox,
    gt: BinaryMask,
    segmenter: Segmenter,
    image_id: str,
    max_in_flight: int = 1,
) -> list[RankedGroup]:
    """Score each group by segmenter-output IoU against gt, best first.

    Sorting is stable, so ties keep sampling order. A failed segmenter call
    scores that group 0 and flags it; if every call fails the whole ranking
    is treated as a pipeline failure.
    """
    from .masks import iou as mask_iou

    def score(group: PointGroup) -> RankedGroup:
        request = SegmentRequest(
            image_id=image_id,
            width=gt.width,
            height=gt.height,
            prompt=SamPrompt(box=box, points=group.labeled_points()),
        )
        try:
            result = segmenter.segment(request)
        except SegmenterError as exc:
            return RankedGroup(group=group, iou=0.0, error=str(exc))
        return RankedGroup(group=group, iou=mask_iou(result.mask, gt))

    groups = list(groups)
    if max_in_flight > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            ranked = list(pool.map(score, groups))  # re-associated by index
    else:
        ranked = [score(g) for g in groups]

    if ranked and all(r.error is not None for r in ranked):
        raise SegmenterError("segmenter failed on every sampled group", retryable=False)
    return sorted(ranked, key=lambda r: -r.iou)


def select_training_groups(
    ranked, cfg: SamplingConfig, rng: np.random.Generator
) -> list[PointGroup]:
    """Uniformly pick k distinct groups among the top-`keep` ranked ones."""
    pool = list(ranked)[: cfg.keep]
    if not pool:
        raise ValueError("ranked group list is empty")
    take = min(cfg.k, len(pool))
    idx = rng.choice(len(pool), size=take, replace=False)
    return [pool[int(i)].group for i in idx]


def sample_pqpp_training_points(
    mask: BinaryMask, box: BBox, cfg: SamplingConfig, rng: np.random.Generator
) -> list[tuple[tuple[int, int], bool]]:
    """Uniform points over the box, labeled by mask membership."""
    n = cfg.pqpp_train_points
    xs = rng.integers(box.x1, box.x2 + 1, size=n)
    ys = rng.integers(box.y1, box.y2 + 1, size=n)
    return [
        ((int(x), int(y)), point_in_mask(mask, int(x), int(y)))
        for x, y in zip(xs, ys)
    ]


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def grid_points(box: BBox, rows: int, cols: int) -> list[tuple[int, int]]:
    """Row-major lattice over the box, endpoints inclusive, deduplicated."""
    if rows < 1 or cols < 1:
        raise ValueError("grid dimensions must be >= 1")
    if cols == 1:
        xs = [(box.x1 + box.x2) // 2]
    else:
        xs = [box.x1 + _round_half_up(j * (box.x2 - box.x1) / (cols - 1)) for j in range(cols)]
    if rows == 1:
        ys = [(box.y1 + box.y2) // 2]
    else:
        ys = [box.y1 + _round_half_up(i * (box.y2 - box.y1) / (rows - 1)) for i in range(rows)]
    pts = [(x, y) for y in ys for x in xs]
    return list(dict.fromkeys(pts))


def random_points_in_box(
    box: BBox, n: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Uniform pixel draws inside the box (alternative to grid sampling)."""
    xs = rng.integers(box.x1, box.x2 + 1, size=n)
    ys = rng.integers(box.y1, box.y2 + 1, size=n)
    return [(int(x), int(y)) for x, y in zip(xs, ys)]


def filter_by_confidence(answers, threshold: float) -> list[LabeledPoint]:
    """Keep answers strictly above the threshold; yes maps to positive."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0,1]")
    return [
        LabeledPoint(a.x, a.y, positive=a.yes)
        for a in answers
        if a.confidence > threshold
    ]
