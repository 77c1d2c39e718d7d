"""HTTP inference service: serves the tag vocabulary and colorizes
submitted line arts against one or more loaded checkpoints.

Model weights are immutable after load; concurrent requests share them
behind a lock (inference itself is serialized FIFO on CPU). Every 4xx
response body carries a machine-readable ``code`` and a human message.
"""
from __future__ import annotations

import base64
import binascii
import io
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from PIL import Image

from .lineart import brightness_scale
from .networks import CheckpointBundle, load_checkpoint
from .vocab import CATEGORIES, TagVocabulary

log = logging.getLogger("tagpaint.service")

REAL_SKETCH_BRIGHTNESS = 4.0  # deployment preset, middle of the U(1,7) range
DEFAULT_MAX_DIM = 2048


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message})


@dataclass
class ColorizeResult:
    image: np.ndarray
    guide: np.ndarray
    checkpoint_id: str
    block_kind: str
    inference_ms: float


class ModelStore:
    """Named checkpoint bundles plus the vocabulary they were trained on."""

    def __init__(self, vocab: TagVocabulary, max_dim: int = DEFAULT_MAX_DIM):
        self.vocab = vocab
        self.max_dim = max_dim
        self.bundles: dict[str, CheckpointBundle] = {}
        self.default_variant: str | None = None
        self.ready = False
        self.started = time.time()
        self._lock = threading.Lock()

    def load(self, checkpoints: dict[str, str | Path],
             default_variant: str | None = None) -> None:
        if not checkpoints:
            raise ValueError("no checkpoints to load")
        for variant, path in checkpoints.items():
            bundle = load_checkpoint(path, self.vocab.sha256(),
                                     with_discriminator=False)
            bundle.generator.eval()
            self.bundles[variant] = bundle
        self.default_variant = default_variant or (
            "secat" if "secat" in self.bundles else next(iter(self.bundles)))
        self.ready = True

    def variants(self) -> list[str]:
        return sorted(self.bundles)

    def colorize(self, image01: np.ndarray, tags: list[str],
                 variant: str | None, real_sketch: bool) -> ColorizeResult:
        name = variant or self.default_variant
        bundle = self.bundles[name]
        size = bundle.config.image_size
        arr = _letterbox_to(image01, size)
        if real_sketch:
            arr = brightness_scale(arr, REAL_SKETCH_BRIGHTNESS)
        cvt = np.zeros(self.vocab.cvt_count, dtype=np.float32)
        for t in tags:
            cvt[self.vocab.cvt_index[t]] = 1.0
        t0 = time.perf_counter()
        with self._lock, torch.no_grad():
            out = bundle.generator(
                torch.from_numpy(arr.astype(np.float32))[None, None],
                torch.from_numpy(cvt)[None])
        ms = (time.perf_counter() - t0) * 1000.0
        to01 = lambda t: ((t[0] + 1.0) / 2.0).clamp(0, 1).permute(1, 2, 0).numpy()
        return ColorizeResult(image=to01(out.full_image),
                              guide=to01(out.guide_image),
                              checkpoint_id=bundle.checkpoint_id,
                              block_kind=bundle.config.block_kind.value,
                              inference_ms=ms)


def _letterbox_to(image01: np.ndarray, size: int) -> np.ndarray:
    """Pad to square with white, then resize; keeps aspect ratio."""
    h, w = image01.shape
    side = max(h, w)
    square = np.ones((side, side), dtype=np.float64)
    y0 = (side - h) // 2
    x0 = (side - w) // 2
    square[y0:y0 + h, x0:x0 + w] = image01
    if side == size:
        return square
    pil = Image.fromarray(np.clip(square * 255, 0, 255).astype(np.uint8))
    pil = pil.resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(pil, dtype=np.float64) / 255.0


def _png_base64(image01: np.ndarray) -> str:
    img8 = np.clip(np.round(image01 * 255), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def create_app(store: ModelStore) -> FastAPI:
    app = FastAPI(title="tagpaint inference service")

    @app.middleware("http")
    async def access_log(request: Request, call_next):
        t0 = time.perf_counter()
        response = await call_next(request)
        log.info("%s %s -> %d (%.1f ms)", request.method, request.url.path,
                 response.status_code, (time.perf_counter() - t0) * 1000)
        return response

    def require_ready():
        if not store.ready:
            raise _error(503, "loading", "model checkpoints not loaded yet")

    @app.get("/health")
    def health():
        require_ready()
        default = store.bundles[store.default_variant]
        return {"status": "ready",
                "checkpoint_id": default.checkpoint_id,
                "vocab_sha256": store.vocab.sha256(),
                "variants": store.variants(),
                "uptime_seconds": time.time() - store.started}

    @app.get("/tags")
    def tags():
        require_ready()
        vocab = store.vocab
        return {"vocab_sha256": vocab.sha256(),
                "cvt": {cat: list(vocab.category_names(cat))
                        for cat in CATEGORIES},
                "cit": list(vocab.cit_names),
                "variants": store.variants(),
                "default_variant": store.default_variant}

    @app.post("/colorize")
    async def colorize(request: Request):
        require_ready()
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                raise _error(422, "missing_image", "multipart field 'image' required")
            raw = await upload.read()
            tag_list = [t for t in str(form.get("tags", "")).split(",") if t]
            variant = form.get("variant") or None
            real_sketch = str(form.get("real_sketch", "")).lower() in ("1", "true")
        else:
            try:
                body = await request.json()
            except Exception:
                raise _error(422, "bad_request", "expected JSON or multipart body")
            b64 = body.get("image_base64")
            if not b64:
                raise _error(422, "missing_image", "field 'image_base64' required")
            try:
                raw = base64.b64decode(b64, validate=True)
            except (binascii.Error, ValueError):
                raise _error(422, "bad_image", "image_base64 is not valid base64")
            tag_list = list(body.get("tags", []))
            variant = body.get("variant") or None
            real_sketch = bool(body.get("real_sketch", False))

        if variant is not None and variant not in store.bundles:
            raise _error(422, "unknown_variant",
                         f"unknown model variant: {variant!r}")
        for t in tag_list:
            if t not in store.vocab.cvt_index:
                raise _error(422, "unknown_tag", f"unknown tag: {t!r}")
        try:
            pil = Image.open(io.BytesIO(raw))
            pil.load()
        except Exception:
            raise _error(422, "bad_image", "could not decode image")
        if pil.width > store.max_dim or pil.height > store.max_dim:
            raise _error(413, "image_too_large",
                         f"image exceeds {store.max_dim}px on a side")
        gray = np.asarray(pil.convert("L"), dtype=np.float64) / 255.0

        result = store.colorize(gray, tag_list, variant, real_sketch)
        return {"image_base64": _png_base64(result.image),
                "guide_image_base64": _png_base64(result.guide),
                "model_info": {"checkpoint_id": result.checkpoint_id,
                               "block_kind": result.block_kind,
                               "inference_ms": result.inference_ms}}

    return app


def build_service(checkpoints: dict[str, str | Path], vocab: TagVocabulary,
                  max_dim: int = DEFAULT_MAX_DIM,
                  default_variant: str | None = None) -> FastAPI:
    store = ModelStore(vocab, max_dim=max_dim)
    store.load(checkpoints, default_variant=default_variant)
    return create_app(store)
