"""The HTTP surface.

    POST /v1/segment   {"image": b64 PNG | "image_id": str,
                        "box": [x1,y1,x2,y2], "points": [[x,y,1|0], ...]}
                       -> {"mask": {"size": [h,w], "counts": [...]}, "score": f}
    PUT  /v1/images    {"image_id": str, "image": b64 PNG}
    GET  /v1/health    {"status": "ok", "model": str, "device": str}

Coordinates on the wire are pixel-space. Errors come back as
{"error": {"code": str, "message": str, "retryable": bool}} with a matching
HTTP status. Model execution is serialized behind a lock; request handling
stays deterministic per (checkpoint, request) pair.
"""

from __future__ import annotations

import base64
import io
import threading
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import ServiceConfig
from .model import ModelError, load_checkpoint
from .rle import encode_mask


class WireError(Exception):
    def __init__(self, status: int, code: str, message: str, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.retryable = retryable


def _error_response(exc: WireError) -> JSONResponse:
    return JSONResponse(
        status_code=exc.status,
        content={
            "error": {
                "code": exc.code,
                "message": exc.message,
                "retryable": exc.retryable,
            }
        },
    )


def _bad_request(message: str) -> WireError:
    return WireError(400, "bad_request", message, retryable=False)


def _decode_png(payload: str) -> np.ndarray:
    from PIL import Image

    try:
        raw = base64.b64decode(payload, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise _bad_request(f"image is not decodable base64 PNG: {exc}")
    arr = np.array(img)
    if arr.ndim == 3:  # label maps are single-channel; tolerate flat RGB
        arr = arr[:, :, 0]
    return arr


def _validate_segment(body: dict, images: dict) -> tuple[np.ndarray, tuple, list]:
    if not isinstance(body, dict):
        raise _bad_request("request body must be a JSON object")
    if "image" in body:
        image = _decode_png(body["image"])
    elif "image_id" in body:
        image_id = body["image_id"]
        if not isinstance(image_id, str):
            raise _bad_request("image_id must be a string")
        if image_id not in images:
            raise WireError(404, "unknown_image", f"image {image_id!r} not registered")
        image = images[image_id]
    else:
        raise _bad_request("request needs either image or image_id")

    height, width = image.shape[:2]
    box = body.get("box")
    if (
        not isinstance(box, list)
        or len(box) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in box)
    ):
        raise _bad_request("box must be [x1, y1, x2, y2] integers")
    x1, y1, x2, y2 = box
    if not (0 <= x1 <= x2 < width and 0 <= y1 <= y2 < height):
        raise _bad_request(f"box {box} outside {width}x{height} image")

    points = body.get("points", [])
    if not isinstance(points, list):
        raise _bad_request("points must be a list of [x, y, flag] triples")
    for p in points:
        if (
            not isinstance(p, list)
            or len(p) != 3
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in p)
        ):
            raise _bad_request(f"malformed point {p!r}; expected [x, y, 1|0]")
        x, y, flag = p
        if flag not in (0, 1):
            raise _bad_request(f"point flag must be 0 or 1, got {flag}")
        if not (0 <= x < width and 0 <= y < height):
            raise _bad_request(f"point ({x},{y}) outside {width}x{height} image")
    return image, (x1, y1, x2, y2), [(p[0], p[1], p[2]) for p in points]


def create_app(config: ServiceConfig) -> FastAPI:
    state = {"model": None}
    images: dict[str, np.ndarray] = {}
    model_lock = threading.Lock()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        # refuse to start on a bad checkpoint
        state["model"] = load_checkpoint(config.checkpoint, config.device)
        yield

    app = FastAPI(title="samserve", lifespan=lifespan)

    @app.exception_handler(WireError)
    async def _wire_error(request: Request, exc: WireError):
        return _error_response(exc)

    @app.get("/v1/health")
    async def health():
        model = state["model"]
        if model is None:
            return JSONResponse(
                status_code=503,
                content={"status": "loading", "model": None, "device": config.device},
            )
        return {"status": "ok", "model": model.name, "device": config.device}

    @app.put("/v1/images")
    async def put_image(request: Request):
        try:
            body = await request.json()
        except Exception:
            raise _bad_request("body is not valid JSON")
        if not isinstance(body, dict) or "image_id" not in body or "image" not in body:
            raise _bad_request("expected {image_id, image}")
        if not isinstance(body["image_id"], str):
            raise _bad_request("image_id must be a string")
        arr = _decode_png(body["image"])
        images[body["image_id"]] = arr
        return {"image_id": body["image_id"], "size": [int(arr.shape[0]), int(arr.shape[1])]}

    @app.post("/v1/segment")
    async def segment(request: Request):
        model = state["model"]
        if model is None:
            raise WireError(503, "not_ready", "model is still loading", retryable=True)
        try:
            body = await request.json()
        except Exception:
            raise _bad_request("body is not valid JSON")
        image, box, points = _validate_segment(body, images)
        try:
            with model_lock:
                mask, score = model.predict(image, box, points)
        except ModelError as exc:
            raise WireError(500, "backend_error", str(exc), retryable=True)
        return {"mask": encode_mask(mask), "score": float(score)}

    return app
