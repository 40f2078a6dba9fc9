"""Annotation ingestion: the native JSONL sample format, validation, and
polygon rasterization.

Native record shape, one JSON object per line:

    {"id": str, "image_id": str, "width": int, "height": int,
     "expression": str, "masks": [RLE | {"polygon": [...]}], "no_target": bool}

where RLE is {"size": [h, w], "counts": [ints...]}. Records that violate the
schema are skipped and logged with their line number; an unreadable file is a
hard error.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .masks import BinaryMask, MaskFormatError, RleMask, decode_rle, encode_rle

logger = logging.getLogger(__name__)

RES_SOURCES = ("refcoco", "refcoco+", "refcocog", "grefcoco")
_SINGLE_TARGET_SOURCES = ("refcoco", "refcoco+", "refcocog")


@dataclass(frozen=True)
class RESample:
    """One referring-expression sample; an empty target tuple means the
    expression matches nothing in the image."""

    sample_id: str
    image_id: str
    width: int
    height: int
    expression: str
    targets: tuple[BinaryMask, ...]
    source: str = "grefcoco"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"bad image dims {self.width}x{self.height}")
        for t in self.targets:
            if (t.height, t.width) != (self.height, self.width):
                raise ValueError(
                    f"target mask {t.width}x{t.height} does not match image "
                    f"{self.width}x{self.height} in sample {self.sample_id}"
                )
        if self.source in _SINGLE_TARGET_SOURCES and len(self.targets) != 1:
            raise ValueError(
                f"{self.source} sample {self.sample_id} must have exactly one target"
            )

    @property
    def no_target(self) -> bool:
        return not self.targets


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    source: str
    annotations: Path
    split: str = ""

    def __post_init__(self):
        if self.source not in RES_SOURCES:
            raise ValueError(f"unknown source tag {self.source!r}")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    ann = Path(obj["annotations"])
    if not ann.is_absolute():
        ann = path.parent / ann
    return DatasetManifest(
        name=str(obj.get("name", path.stem)),
        source=str(obj.get("source", "grefcoco")),
        annotations=ann,
        split=str(obj.get("split", "")),
    )


def _normalize_rings(vertices) -> list[list[tuple[float, float]]]:
    if not vertices:
        raise MaskFormatError("polygon has no vertices")
    first = vertices[0]
    if isinstance(first, (list, tuple)) and first and isinstance(
        first[0], (list, tuple)
    ):
        rings = [list(map(tuple, ring)) for ring in vertices]
    else:
        rings = [list(map(tuple, vertices))]
    for ring in rings:
        if len(ring) < 3:
            raise MaskFormatError(f"polygon ring has {len(ring)} vertices, need >= 3")
    return rings


def _fill_ring(ring, width: int, height: int) -> np.ndarray:
    # Even-odd crossing count at pixel centers (x+0.5, y+0.5).
    cy = np.arange(height, dtype=np.float64) + 0.5
    cx = np.arange(width, dtype=np.float64) + 0.5
    X, Y = np.meshgrid(cx, cy)
    inside = np.zeros((height, width), dtype=bool)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if y1 == y2:
            continue
        spans = (y1 <= Y) != (y2 <= Y)
        xint = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= spans & (X < xint)
    return inside


def rasterize_polygon(vertices, width: int, height: int) -> BinaryMask:
    """Even-odd fill at pixel centers; a list of rings is unioned."""
    rings = _normalize_rings(vertices)
    acc = np.zeros((height, width), dtype=bool)
    for ring in rings:
        acc |= _fill_ring(ring, width, height)
    return BinaryMask(acc)


def _decode_mask_entry(entry, width: int, height: int, source: str) -> BinaryMask:
    if not isinstance(entry, dict):
        raise MaskFormatError(f"mask entry is not an object {entry!r}")
    if "polygon" in entry:
        return rasterize_polygon(entry["polygon"], width, height)
    rle = RleMask.from_json(entry, source=source)
    mask = decode_rle(rle, source=source)
    if (mask.height, mask.width) != (height, width):
        raise MaskFormatError(
            f"mask is {mask.width}x{mask.height}, record says {width}x{height} ({source})"
        )
    return mask


def _parse_record(obj: dict, source_tag: str, where: str) -> RESample:
    for key in ("id", "image_id", "width", "height", "expression"):
        if key not in obj:
            raise MaskFormatError(f"missing field {key!r} ({where})")
    width = int(obj["width"])
    height = int(obj["height"])
    no_target = bool(obj.get("no_target", False))
    raw_masks = obj.get("masks", [])
    if no_target and raw_masks:
        raise MaskFormatError(f"no_target record carries masks ({where})")
    targets = tuple(
        _decode_mask_entry(m, width, height, where) for m in raw_masks
    )
    return RESample(
        sample_id=str(obj["id"]),
        image_id=str(obj["image_id"]),
        width=width,
        height=height,
        expression=str(obj["expression"]),
        targets=targets,
        source=source_tag,
    )


def load_samples(manifest: DatasetManifest) -> Iterator[RESample]:
    """Stream validated samples in file order; bad records are skipped."""
    with open(manifest.annotations, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{manifest.annotations.name}:{lineno}"
            try:
                obj = json.loads(line)
                sample = _parse_record(obj, manifest.source, where)
            except (MaskFormatError, ValueError, TypeError) as exc:
                logger.warning("skipping record at %s: %s", where, exc)
                continue
            yield sample


def sample_to_json(sample: RESample) -> dict:
    return {
        "id": sample.sample_id,
        "image_id": sample.image_id,
        "width": sample.width,
        "height": sample.height,
        "expression": sample.expression,
        "masks": [encode_rle(t).to_json() for t in sample.targets],
        "no_target": sample.no_target,
    }


def write_samples_jsonl(samples, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_json(s), ensure_ascii=False))
            fh.write("\n")


def convert_coco_refs(src_path, out_path, source_tag: str = "grefcoco", split: str = ""):
    """Import a COCO-style dump (images + annotations + refs) into the native
    JSONL. Refs may carry `ann_ids` (multi-instance), a single `ann_id`, or
    neither (no-target); expressions come from `expression` or the first of
    `sentences`.
    """
    with open(src_path, "r", encoding="utf-8") as fh:
        dump = json.load(fh)
    images = {img["id"]: img for img in dump.get("images", [])}
    anns = {ann["id"]: ann for ann in dump.get("annotations", [])}

    def ref_masks(ref, width, height):
        ids = ref.get("ann_ids")
        if ids is None:
            ids = [ref["ann_id"]] if "ann_id" in ref else []
        masks = []
        for ann_id in ids:
            seg = anns[ann_id]["segmentation"]
            if isinstance(seg, dict):
                masks.append(decode_rle(RleMask.from_json(seg), source=str(ann_id)))
            else:
                rings = [
                    [(seg_i[j], seg_i[j + 1]) for j in range(0, len(seg_i), 2)]
                    for seg_i in seg
                ]
                masks.append(rasterize_polygon(rings, width, height))
        return masks

    count = 0
    with open(out_path, "w", encoding="utf-8", newline="\n") as out:
        for ref in dump.get("refs", []):
            if split and ref.get("split", "") != split:
                continue
            img = images[ref["image_id"]]
            width, height = int(img["width"]), int(img["height"])
            expression = ref.get("expression")
            if expression is None:
                expression = ref["sentences"][0]["sent"]
            no_target = bool(ref.get("no_target", False))
            masks = [] if no_target else ref_masks(ref, width, height)
            sample = RESample(
                sample_id=str(ref.get("ref_id", count)),
                image_id=str(ref["image_id"]),
                width=width,
                height=height,
                expression=str(expression),
                targets=tuple(masks),
                source=source_tag,
            )
            out.write(json.dumps(sample_to_json(sample), ensure_ascii=False))
            out.write("\n")
            count += 1
    return count
