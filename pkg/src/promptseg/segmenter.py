"""Promptable-segmenter abstraction.

One `segment` contract, three backends:

* IdentitySegmenter — test double returning a registered mask per image.
* SyntheticSegmenter — deterministic stand-in that applies box/point prompt
  semantics to a region label map, exactly checkable at desk scale.
* RemoteSegmenter — HTTP client for a real segmenter service speaking the
  /v1/segment wire protocol.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .codec import SamPrompt
from .masks import BBox, BinaryMask, RleMask, decode_rle


class SegmenterError(RuntimeError):
    """A backend could not produce a mask for a request."""

    def __init__(self, message: str, retryable: bool = False, code: str = ""):
        super().__init__(message)
        self.retryable = retryable
        self.code = code


@dataclass(frozen=True)
class SegmentRequest:
    image_id: str
    width: int
    height: int
    prompt: SamPrompt
    image_payload: str | None = None  # base64 PNG, for backends that accept inline images

    def __post_init__(self):
        self.prompt.validate_within(self.width, self.height)


@dataclass(frozen=True)
class SegmentResult:
    mask: BinaryMask
    score: float


class Segmenter(Protocol):
    def segment(self, request: SegmentRequest) -> SegmentResult: ...


class IdentitySegmenter:
    """Returns the mask registered for the request's image, ignoring the prompt."""

    def __init__(self, masks: dict[str, BinaryMask] | None = None):
        self._masks = dict(masks or {})

    def register(self, image_id: str, mask: BinaryMask):
        self._masks[image_id] = mask

    def segment(self, request: SegmentRequest) -> SegmentResult:
        mask = self._masks.get(request.image_id)
        if mask is None:
            raise SegmenterError(f"no mask registered for image {request.image_id!r}")
        return SegmentResult(mask=mask, score=1.0)


def scene_from_targets(width: int, height: int, targets) -> np.ndarray:
    """Label map with region i+1 per target mask over background 0.

    Later targets win on overlap; at desk scale fixtures keep targets disjoint.
    """
    scene = np.zeros((height, width), dtype=np.int32)
    for i, t in enumerate(targets):
        scene[t.bits] = i + 1
    return scene


def apply_region_rule(
    scene: np.ndarray, box: BBox, points
) -> tuple[BinaryMask, float]:
    """Prompt semantics over a label map.

    Output = union of regions holding a positive point, minus regions holding
    a negative point, clipped to the box. Negatives dominate. Score is the
    surviving fraction of positive points (0 when there are none).
    """
    h, w = scene.shape
    pos_labels = {int(scene[p.y, p.x]) for p in points if p.positive}
    neg_labels = {int(scene[p.y, p.x]) for p in points if not p.positive}
    include = pos_labels - neg_labels
    out = np.isin(scene, sorted(include)) if include else np.zeros((h, w), dtype=bool)
    clip = np.zeros((h, w), dtype=bool)
    clip[box.y1 : box.y2 + 1, box.x1 : box.x2 + 1] = True
    out &= clip
    n_pos = sum(1 for p in points if p.positive)
    if n_pos == 0:
        score = 0.0
    else:
        excluded = sum(
            1 for p in points if p.positive and int(scene[p.y, p.x]) in neg_labels
        )
        score = 1.0 - excluded / n_pos
    return BinaryMask(out), score


class SyntheticSegmenter:
    """Deterministic prompt-rule segmenter over registered label-map scenes."""

    def __init__(self, scenes: dict[str, np.ndarray] | None = None):
        self._scenes = {k: np.asarray(v) for k, v in (scenes or {}).items()}

    def register(self, image_id: str, scene: np.ndarray):
        self._scenes[image_id] = np.asarray(scene)

    def segment(self, request: SegmentRequest) -> SegmentResult:
        scene = self._scenes.get(request.image_id)
        if scene is None:
            raise SegmenterError(f"no scene registered for image {request.image_id!r}")
        if scene.shape != (request.height, request.width):
            raise SegmenterError(
                f"scene shape {scene.shape} does not match request "
                f"{request.height}x{request.width}"
            )
        mask, score = apply_region_rule(scene, request.prompt.box, request.prompt.points)
        return SegmentResult(mask=mask, score=score)


class RemoteSegmenter:
    """Client for the POST /v1/segment wire protocol.

    Retries retryable failures up to `max_retries` times with exponential
    backoff; concurrent segment() calls are capped by `max_in_flight`. The
    service is required to answer identical requests identically; this
    client treats requests as idempotent on that basis.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_base: float = 0.1,
        max_in_flight: int = 8,
        session=None,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._gate = threading.Semaphore(max_in_flight)
        if session is None:
            session = requests.Session()
            adapter = requests.adapters.HTTPAdapter(
                pool_connections=max_in_flight, pool_maxsize=max_in_flight
            )
            session.mount("http://", adapter)
            session.mount("https://", adapter)
        self._session = session

    def _payload(self, request: SegmentRequest) -> dict:
        body = {
            "box": list(request.prompt.box.as_tuple()),
            "points": [
                [p.x, p.y, 1 if p.positive else 0] for p in request.prompt.points
            ],
        }
        if request.image_payload is not None:
            body["image"] = request.image_payload
        else:
            body["image_id"] = request.image_id
        return body

    def segment(self, request: SegmentRequest) -> SegmentResult:
        import requests

        payload = self._payload(request)
        url = self.base_url + "/v1/segment"
        last: SegmenterError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last = SegmenterError(f"transport failure: {exc}", retryable=True)
                continue
            try:
                body = resp.json()
            except ValueError:
                last = SegmenterError(
                    f"non-JSON response (HTTP {resp.status_code})", retryable=True
                )
                continue
            if "error" in body:
                err = body["error"]
                last = SegmenterError(
                    str(err.get("message", "backend error")),
                    retryable=bool(err.get("retryable", False)),
                    code=str(err.get("code", "")),
                )
                if not last.retryable:
                    raise last
                continue
            try:
                mask = decode_rle(RleMask.from_json(body["mask"]), source=url)
                score = float(body.get("score", 0.0))
            except (KeyError, ValueError) as exc:
                raise SegmenterError(f"undecodable response: {exc}") from exc
            if (mask.height, mask.width) != (request.height, request.width):
                raise SegmenterError(
                    f"response mask is {mask.width}x{mask.height}, "
                    f"request was {request.width}x{request.height}"
                )
            return SegmentResult(mask=mask, score=score)
        assert last is not None
        raise last


def upper_bound_iou(
    image_id: str,
    gt: BinaryMask,
    box: BBox,
    segmenter: Segmenter,
    cfg,
    rng,
):
    """Best achievable IoU over K gt-derived prompt groups.

    Groups are drawn sequentially from the stream, so the result is
    non-decreasing in K for a fixed stream state.
    """
    from .masks import iou as mask_iou
    from .sampling import sample_point_groups

    groups = sample_point_groups(gt, box, cfg, rng)
    best = -1.0
    best_group = None
    for group in groups:
        request = SegmentRequest(
            image_id=image_id,
            width=gt.width,
            height=gt.height,
            prompt=SamPrompt(box=box, points=group.labeled_points()),
        )
        result = segmenter.segment(request)
        value = mask_iou(result.mask, gt)
        if value > best:
            best = value
            best_group = group
    return best, best_group
