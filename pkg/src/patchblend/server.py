"""JSON-over-HTTP inference service over a directory of model bundles.

Bundles load lazily into a small LRU; requests never mutate a bundle, and a
response body is a pure function of (model, request body, seed) — timing goes
into the X-Timing-Ms header so identical requests stay byte-identical.
"""

from __future__ import annotations

import base64
import binascii
import os
import threading
import time
from collections import OrderedDict

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import apps
from .bundle import BundleError, load_bundle
from .identity import (IdentityMap, IdentitySchedule, PartitionError,
                       blend_constant, constant_id, decode_id_map, ramp_id,
                       resample_id)
from .pyramid import encode_png


class _BundleCache:
    def __init__(self, root, max_size: int = 4):
        self.root = root
        self.max_size = max_size
        self._cache = OrderedDict()
        self._lock = threading.Lock()

    def list_ids(self) -> list:
        out = []
        for name in sorted(os.listdir(self.root)):
            if os.path.exists(os.path.join(self.root, name, "manifest.json")):
                out.append(name)
        return out

    def get(self, model_id: str):
        with self._lock:
            if model_id in self._cache:
                self._cache.move_to_end(model_id)
                return self._cache[model_id]
        path = os.path.join(self.root, model_id)
        if not os.path.exists(os.path.join(path, "manifest.json")):
            raise KeyError(model_id)
        bundle = load_bundle(path)
        with self._lock:
            self._cache[model_id] = bundle
            self._cache.move_to_end(model_id)
            while len(self._cache) > self.max_size:
                self._cache.popitem(last=False)
        return bundle


class RequestProblem(ValueError):
    def __init__(self, message, status=400):
        super().__init__(message)
        self.status = status


def _require(body: dict, key: str):
    if key not in body:
        raise RequestProblem(f"missing field {key!r}")
    return body[key]


def _decode_mask_payload(payload, K: int) -> IdentityMap:
    data = payload.get("png_base64") or payload.get("raster_base64")
    if not data:
        raise RequestProblem("mask payload needs png_base64 or raster_base64")
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise RequestProblem(f"mask payload is not valid base64: {exc}")
    return decode_id_map(raw, K=K)


def _id_map_from_payload(payload: dict, bundle, size_hw) -> IdentityMap:
    kind = _require(payload, "kind")
    if kind == "constant":
        return constant_id(int(_require(payload, "k")), bundle.K, size_hw)
    if kind == "blend":
        return blend_constant([float(v) for v in _require(payload, "weights")], size_hw)
    if kind == "ramp":
        if bundle.K != 2:
            raise RequestProblem(f"ramp maps need K=2, model has K={bundle.K}")
        a = float(payload.get("a", 1.0 / 3.0))
        b = float(payload.get("b", 2.0 / 3.0))
        return ramp_id(payload.get("axis", "horizontal"), (a, b), size_hw)
    if kind == "mask":
        idm = _decode_mask_payload(payload, bundle.K)
        return resample_id(idm, size_hw) if (idm.height, idm.width) != tuple(size_hw) else idm
    raise RequestProblem(f"unknown id_map kind {kind!r}")


def _schedule_from_body(body: dict, bundle, size_hw):
    if "schedule" in body and body["schedule"] is not None:
        entries = body["schedule"]
        if len(entries) != bundle.plan.n_levels:
            raise RequestProblem(
                f"schedule needs {bundle.plan.n_levels} entries, got {len(entries)}"
            )
        return IdentitySchedule([_id_map_from_payload(e, bundle, size_hw) for e in entries])
    return _id_map_from_payload(_require(body, "id_map"), bundle, size_hw)


def create_app(bundle_root, lru_size: int = 4) -> FastAPI:
    app = FastAPI(title="patchblend inference service")
    cache = _BundleCache(bundle_root, max_size=lru_size)

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.exception_handler(Exception)
    async def _unhandled(request: Request, exc: Exception):  # pragma: no cover
        return _error(500, f"internal error: {exc}")

    @app.get("/models")
    def list_models():
        out = []
        for model_id in cache.list_ids():
            bundle = cache.get(model_id)
            thumbs = []
            for k in range(bundle.K):
                thumbs.append(base64.b64encode(encode_png(bundle.images[k])).decode())
            out.append({"model_id": model_id, "K": bundle.K,
                        "scale_count": bundle.plan.n_levels,
                        "thumbnails": thumbs})
        return out

    @app.post("/models/{model_id}/generate")
    async def generate(model_id: str, request: Request):
        t0 = time.monotonic()
        try:
            bundle = cache.get(model_id)
        except KeyError:
            return _error(404, f"unknown model {model_id!r}")
        try:
            body = await request.json()
            image, echo = _generate(bundle, body)
        except apps.CategoricalRequired as exc:
            return _error(422, str(exc))
        except RequestProblem as exc:
            return _error(exc.status, str(exc))
        except (PartitionError, apps.GenerationError, ValueError) as exc:
            return _error(400, str(exc))
        except BundleError as exc:
            return _error(409, str(exc))
        payload = {"image": base64.b64encode(encode_png(image)).decode(),
                   "request_echo": echo}
        ms = (time.monotonic() - t0) * 1000.0
        return JSONResponse(content=payload, headers={"X-Timing-Ms": f"{ms:.1f}"})

    @app.post("/models/{model_id}/morph")
    async def morph(model_id: str, request: Request):
        t0 = time.monotonic()
        try:
            bundle = cache.get(model_id)
        except KeyError:
            return _error(404, f"unknown model {model_id!r}")
        try:
            body = await request.json()
            weights = _require(body, "weights_sequence")
            seed = int(body.get("seed", 0))
            noise = body.get("noise", "reconstruction")
            if weights and not isinstance(weights[0], (list, tuple)):
                weights = apps.morph_pair_weights([float(v) for v in weights], K=bundle.K)
            frames = apps.morph(bundle, weights, noise_mode=noise, seed=seed)
        except RequestProblem as exc:
            return _error(exc.status, str(exc))
        except (apps.GenerationError, ValueError) as exc:
            return _error(400, str(exc))
        payload = {"frames": [base64.b64encode(encode_png(f)).decode() for f in frames]}
        ms = (time.monotonic() - t0) * 1000.0
        return JSONResponse(content=payload, headers={"X-Timing-Ms": f"{ms:.1f}"})

    return app


def _generate(bundle, body: dict):
    mode = body.get("mode", "sample")
    seed = int(body.get("seed", 0))
    size = body.get("size")
    if size is not None:
        size = (int(size[0]), int(size[1]))
    base_size = size or tuple(bundle.plan.sizes[0])
    echo = {"mode": mode, "seed": seed, "size": list(base_size)}

    if mode == "sample":
        ids = _schedule_from_body(body, bundle, base_size)
        noise = body.get("noise", "random")
        if noise == "reconstruction":
            if isinstance(ids, IdentityMap) and ids.is_categorical() and _is_constant(ids):
                k = int(ids.weights[0, 0].argmax())
                return apps.reconstruct(bundle, k), {**echo, "noise": noise, "k": k}
            raise RequestProblem("reconstruction noise needs a constant categorical id map")
        return apps.sample(bundle, ids, size=size, seed=seed), {**echo, "noise": "random"}

    if mode == "meld":
        k_left = int(body.get("k_left", 0))
        k_right = int(body.get("k_right", min(1, bundle.K - 1)))
        width = int(body.get("out_width", base_size[1]))
        frac = float(body.get("transition_frac", 1.0 / 3.0))
        img = apps.meld(bundle, k_left, k_right, width, transition_frac=frac, seed=seed)
        return img, {**echo, "k_left": k_left, "k_right": k_right,
                     "out_width": width, "transition_frac": frac}

    if mode == "morph":
        weights = _require(body, "weights")
        img = apps.morph(bundle, [weights], noise_mode=body.get("noise", "reconstruction"),
                         seed=seed)[0]
        return img, {**echo, "weights": list(weights)}

    if mode == "fuse":
        structure = int(_require(body, "structure_k"))
        texture = int(_require(body, "texture_k"))
        transition = int(_require(body, "transition_scale"))
        img = apps.fuse(bundle, structure, texture, transition, seed=seed, size=size)
        return img, {**echo, "structure_k": structure, "texture_k": texture,
                     "transition_scale": transition}

    if mode == "spatial":
        payload = _require(body, "id_map")
        if payload.get("kind") != "mask":
            raise RequestProblem("spatial mode needs an id_map of kind mask")
        idm = _decode_mask_payload(payload, bundle.K)
        faithful = payload.get("faithful") or body.get("faithful")
        img = apps.spatial_sample(bundle, idm, faithful=faithful, seed=seed)
        return img, {**echo, "faithful": list(faithful or [])}

    if mode == "edit":
        data = _require(body, "image_png_base64")
        try:
            raw = base64.b64decode(data, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise RequestProblem(f"edit image is not valid base64: {exc}")
        import io

        from PIL import Image

        with Image.open(io.BytesIO(raw)) as im:
            edited = np.asarray(im.convert("RGB"), dtype=np.float32) / 127.5 - 1.0
        inject = body.get("inject_scale")
        k = int(body.get("k", 0))
        img = apps.edit(bundle, edited, inject_scale=inject, k=k, seed=seed)
        return img, {**echo, "inject_scale": inject, "k": k}

    raise RequestProblem(f"unknown mode {mode!r}")


def _is_constant(idm: IdentityMap) -> bool:
    first = idm.weights[0, 0]
    return bool(np.all(idm.weights == first))
