"""Stateless HTTP inference service.

`POST /api/erase` accepts a base64 PNG plus region polygons and returns the
erased image (and stroke maps); `GET /api/health` reports readiness.  The
checkpoint is loaded once into an immutable snapshot shared by handlers.
With `composite=true` every pixel outside the polygon union is byte-equal
to the input.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import json
import os
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .core import (
    load_image_png,
    rasterize_polygons,
    save_image_png,
    save_mask_png,
    validate_polygon,
)
from .networks import erase_arrays
from .training import load_checkpoint

DEFAULT_MAX_PIXELS = 2048 * 2048
PAD_MULTIPLE = 64


class EraseRequest(BaseModel):
    image: str
    polygons: list[list[tuple[float, float]]] = Field(min_length=1)
    composite: bool = True
    return_strokes: bool = True


class EraseResponse(BaseModel):
    erased: str
    stroke_mask: str | None = None
    stroke_mask2: str | None = None
    timings_ms: dict[str, float]


def _encode_image(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    save_image_png(buf, arr)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _encode_mask(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    save_mask_png(buf, arr)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    ckpt: str | Path | None = None,
    max_pixels: int | None = None,
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service app.

    Falls back to `STROKELESS_CKPT` / `STROKELESS_MAX_PIXELS` when arguments
    are omitted; without any checkpoint the app starts unloaded and answers
    503 until one is configured.  A UI build directory, when present, is
    served at `/`.
    """
    if ckpt is None:
        ckpt = os.environ.get("STROKELESS_CKPT") or None
    if max_pixels is None:
        env = os.environ.get("STROKELESS_MAX_PIXELS")
        max_pixels = int(env) if env else DEFAULT_MAX_PIXELS
    if static_dir is None:
        static_dir = os.environ.get("STROKELESS_STATIC") or Path("frontend/dist")

    app = FastAPI(title="strokeless")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    app.state.cascade = None
    app.state.ckpt_version = None
    app.state.config_hash = None
    if ckpt is not None:
        state = load_checkpoint(ckpt)
        app.state.cascade = state.cascade.eval()
        manifest = json.loads((Path(ckpt) / "manifest.json").read_text())
        app.state.ckpt_version = manifest["format_version"]
        app.state.config_hash = hashlib.sha256(
            json.dumps(manifest["config"], sort_keys=True).encode()
        ).hexdigest()[:16]

    @app.get("/api/health")
    def health():
        if app.state.cascade is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return {
            "status": "ok",
            "ckpt_version": app.state.ckpt_version,
            "model_config_hash": app.state.config_hash,
        }

    @app.post("/api/erase", response_model=EraseResponse, response_model_exclude_none=True)
    def erase(req: EraseRequest) -> EraseResponse:
        if app.state.cascade is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        started = time.perf_counter()
        try:
            raw = base64.b64decode(req.image, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid base64 image: {exc}")
        try:
            image = load_image_png(io.BytesIO(raw))
        except Exception as exc:
            raise HTTPException(status_code=400, detail=f"not a decodable PNG: {exc}")
        h, w = image.shape[:2]
        if h * w > max_pixels:
            raise HTTPException(
                status_code=413,
                detail=f"image has {h * w} pixels, limit is {max_pixels}",
            )
        polygons = [np.asarray(p, dtype=np.float64) for p in req.polygons]
        for poly in polygons:
            try:
                validate_polygon(poly, w, h)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        region = rasterize_polygons(polygons, h, w)
        preprocess_ms = (time.perf_counter() - started) * 1000.0

        started = time.perf_counter()
        outputs = erase_arrays(
            app.state.cascade,
            image,
            region,
            composite=req.composite,
            pad_multiple=PAD_MULTIPLE,
        )
        forward_ms = (time.perf_counter() - started) * 1000.0

        started = time.perf_counter()
        stroke_keys = sorted(k for k in outputs if k.startswith("stroke_"))
        stroke_mask = stroke_mask2 = None
        if req.return_strokes and stroke_keys:
            stroke_mask = _encode_mask(outputs[stroke_keys[0]])
            if len(stroke_keys) > 1:
                stroke_mask2 = _encode_mask(outputs[stroke_keys[-1]])
        erased_b64 = _encode_image(outputs["erased"])
        encode_ms = (time.perf_counter() - started) * 1000.0

        return EraseResponse(
            erased=erased_b64,
            stroke_mask=stroke_mask,
            stroke_mask2=stroke_mask2,
            timings_ms={
                "preprocess": preprocess_ms,
                "forward": forward_ms,
                "encode": encode_ms,
            },
        )

    static_dir = Path(static_dir)
    if static_dir.is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
