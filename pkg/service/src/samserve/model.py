"""Segmenter model loading.

A checkpoint is a JSON descriptor naming the model kind. The built-in
"region-map" model is a deterministic stand-in that reads the input image as
a region label map and applies box/point prompt semantics; it is what
integration suites run against. Heavyweight SAM-family checkpoints plug in
through the same `PromptableModel` protocol and loader registry.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Protocol

import numpy as np


class ModelError(RuntimeError):
    """The model failed on a request (retryable by the client)."""


class CheckpointError(RuntimeError):
    """The checkpoint cannot be loaded; the service must not start."""


class PromptableModel(Protocol):
    name: str

    def predict(
        self, image: np.ndarray, box: tuple[int, int, int, int], points
    ) -> tuple[np.ndarray, float]:
        """Boolean mask of the image's shape plus a quality score in [0,1]."""
        ...


class RegionMapModel:
    """Prompt semantics over a label-map image.

    The mask is the union of regions touched by a positive point minus
    regions touched by a negative point, clipped to the box; a negative
    always wins over a positive on the same region. The score is the
    fraction of positive points whose region survived.
    """

    def __init__(self, name: str = "region-map", device: str = "cpu"):
        self.name = name
        self.device = device

    def predict(self, image, box, points):
        if image.ndim != 2:
            raise ModelError(f"expected a single-channel label map, got shape {image.shape}")
        height, width = image.shape
        x1, y1, x2, y2 = box
        pos = {int(image[y, x]) for x, y, flag in points if flag}
        neg = {int(image[y, x]) for x, y, flag in points if not flag}
        keep = pos - neg
        mask = np.isin(image, sorted(keep)) if keep else np.zeros((height, width), bool)
        clip = np.zeros((height, width), bool)
        clip[y1 : y2 + 1, x1 : x2 + 1] = True
        mask &= clip
        n_pos = sum(1 for _, _, flag in points if flag)
        if n_pos == 0:
            score = 0.0
        else:
            lost = sum(1 for x, y, flag in points if flag and int(image[y, x]) in neg)
            score = 1.0 - lost / n_pos
        return mask, score


def _load_region_map(descriptor: dict, device: str) -> PromptableModel:
    return RegionMapModel(name=str(descriptor.get("name", "region-map")), device=device)


# checkpoint "model" field -> loader; SAM-family wrappers register here
LOADERS = {
    "region-map": _load_region_map,
}


def load_checkpoint(path: Path, device: str) -> PromptableModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        descriptor = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is not a readable descriptor: {exc}")
    kind = descriptor.get("model")
    loader = LOADERS.get(kind)
    if loader is None:
        raise CheckpointError(
            f"checkpoint {path} names unsupported model {kind!r}; "
            f"known kinds: {sorted(LOADERS)}"
        )
    return loader(descriptor, device)
