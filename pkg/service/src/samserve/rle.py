"""Mask wire encoding: column-major run lengths, first count is background."""

from __future__ import annotations

import numpy as np


def encode_mask(mask: np.ndarray) -> dict:
    height, width = mask.shape
    flat = mask.astype(np.int8).ravel(order="F")
    padded = np.concatenate(([-1], flat, [-1]))
    edges = np.flatnonzero(np.diff(padded))
    counts = np.diff(edges).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(height), int(width)], "counts": [int(c) for c in counts]}
