"""HTTP/JSON API over the explanation engine.

Endpoints (all JSON; CORS open for the browser UI):

    GET  /v1/models              loaded model list with config summaries
    GET  /v1/models/{id}/vocab   classifier labels
    POST /v1/explain             heatmap + score for one image/query
    POST /v1/perturb             single-image erasure curve

Models are loaded once at startup and shared read-only; requests are
stateless. Status codes: 400 invalid request, 404 unknown model,
413 oversized image, 422 undecodable image, 500 inference failure.

Request bodies are parsed by hand rather than through a schema layer so
the error-code contract above stays exact.
"""

from __future__ import annotations

import base64
import binascii
import glob
import io
import os
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from . import eval as evalmod
from . import explain as explainmod
from . import model
from .container import ContainerError
from .ops import NumericError

MAX_IMAGE_BYTES = 8 * 1024 * 1024


class NoModelsError(Exception):
    """An explicitly requested container could not be loaded."""


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _load_models(model_dir, paths):
    bundles, invalid = {}, {}
    seen = []
    if model_dir and os.path.isdir(model_dir):
        seen.extend(sorted(glob.glob(os.path.join(model_dir, "*.lgtc"))))
    for p in paths:
        if not os.path.isfile(p):
            raise NoModelsError(f"model container not found: {p}")
        seen.append(p)
    for path in seen:
        mid = os.path.splitext(os.path.basename(path))[0]
        try:
            bundles[mid] = model.load_bundle(path)
        except (ContainerError, model.ModelError, OSError, ValueError) as exc:
            if path in paths:
                raise NoModelsError(f"failed to load {path}: {exc}") from exc
            invalid[mid] = f"{type(exc).__name__}: {exc}"
    return bundles, invalid


def _model_summary(mid: str, bundle: model.ModelBundle) -> dict:
    cfg = bundle.config
    return {
        "id": mid,
        "status": "ok",
        "config": {
            "layers": cfg.layers, "heads": cfg.heads, "width": cfg.width,
            "patch_size": cfg.patch_size, "image_size": cfg.image_size,
            "num_patches": cfg.num_patches, "pooling": cfg.pooling,
        },
        "classifier": {"kind": bundle.classifier.kind,
                       "num_classes": bundle.classifier.num_classes},
        "embeddings": sorted(bundle.extra_embeddings),
        "provenance": bundle.provenance,
    }


def _decode_image(payload: dict, bundle: model.ModelBundle) -> np.ndarray:
    data = payload.get("image")
    if not isinstance(data, str) or not data:
        raise ApiError(400, "missing base64 'image' field")
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError):
        raise ApiError(422, "image is not valid base64")
    if len(raw) > MAX_IMAGE_BYTES:
        raise ApiError(413, f"image exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            img.load()
            return model.preprocess(img, bundle.preprocessing,
                                    bundle.config.image_size)
    except (OSError, ValueError) as exc:
        raise ApiError(422, f"cannot decode image: {exc}")


def _parse_query(payload: dict, bundle: model.ModelBundle) -> explainmod.Query:
    q = payload.get("query")
    if not isinstance(q, dict):
        raise ApiError(400, "missing 'query' object")
    kwargs = {"label": q.get("label"), "class_index": q.get("class_index"),
              "embedding": q.get("embedding_name")}
    try:
        return explainmod.resolve_query(bundle, **kwargs)
    except explainmod.QueryError as exc:
        raise ApiError(400, str(exc))


def _parse_layers(payload: dict, bundle: model.ModelBundle):
    spec = payload.get("layer_range")
    if spec is None:
        return None
    try:
        return explainmod.resolve_layer_spec(spec, bundle.config.layers)
    except explainmod.LayerRangeError as exc:
        raise ApiError(400, str(exc))


def create_app(model_dir: str | None = None, paths=None, bundles=None) -> FastAPI:
    """Build the service. `bundles` injects preloaded models (tests)."""
    loaded, invalid = (dict(bundles or {}), {}) if bundles is not None \
        else _load_models(model_dir or os.environ.get("LEGRAD_MODEL_DIR"),
                          list(paths or []))

    app = FastAPI(title="legrad", docs_url=None, redoc_url=None)
    app.state.models = loaded
    app.state.invalid = invalid
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["GET", "POST"], allow_headers=["*"])

    def get_bundle(payload: dict) -> tuple[str, model.ModelBundle]:
        mid = payload.get("model_id")
        if mid is None:
            if len(loaded) == 1:
                return next(iter(loaded.items()))
            raise ApiError(400, "model_id required when several models are loaded")
        if mid not in loaded:
            raise ApiError(404, f"unknown model '{mid}'")
        return mid, loaded[mid]

    @app.exception_handler(ApiError)
    async def _api_error(_req, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    @app.get("/v1/models")
    async def list_models():
        entries = [_model_summary(mid, b) for mid, b in sorted(loaded.items())]
        entries.extend({"id": mid, "status": "invalid", "error": why}
                       for mid, why in sorted(invalid.items()))
        return entries

    @app.get("/v1/models/{mid}/vocab")
    async def vocab(mid: str):
        if mid not in loaded:
            raise ApiError(404, f"unknown model '{mid}'")
        clf = loaded[mid].classifier
        return {"kind": clf.kind, "labels": list(clf.labels),
                "embeddings": sorted(loaded[mid].extra_embeddings)}

    async def read_payload(request: Request) -> dict:
        try:
            payload = await request.json()
        except Exception:
            raise ApiError(400, "request body is not valid JSON")
        if not isinstance(payload, dict):
            raise ApiError(400, "request body must be a JSON object")
        return payload

    @app.post("/v1/explain")
    async def explain_endpoint(request: Request):
        payload = await read_payload(request)
        started = time.monotonic()
        mid, bundle = get_bundle(payload)
        method = payload.get("method", "legrad")
        if method not in explainmod.METHODS:
            raise ApiError(400, f"unknown method '{method}'")
        query = _parse_query(payload, bundle)
        layers = _parse_layers(payload, bundle)
        tensor = _decode_image(payload, bundle)
        suppress = bool(payload.get("suppress_background", False))
        try:
            heatmap = explainmod.explain(bundle, tensor, method, query,
                                         layer_range=layers,
                                         suppress_background=suppress)
            score = explainmod.prediction_score(bundle, tensor, query)
            layer_summaries = _layer_summaries(bundle, tensor, query, method,
                                               layers)
        except explainmod.QueryError as exc:
            raise ApiError(400, str(exc))
        except (NumericError, ArithmeticError) as exc:
            raise ApiError(500, f"inference failed: {exc}")
        body = heatmap.to_json_dict()
        body["score"] = score
        body["model_id"] = mid
        body["provenance"] = bundle.provenance
        body["layer_summaries"] = layer_summaries
        body["png_base64"] = base64.b64encode(heatmap.to_png_bytes()).decode("ascii")
        if payload.get("include_timing", False):
            body["timing_ms"] = (time.monotonic() - started) * 1000.0
        return body

    def _layer_summaries(bundle, tensor, query, method, layers):
        if method != "legrad":
            return []
        trace = explainmod._trace_for_image(bundle, tensor)
        chosen = explainmod.resolve_layer_spec(layers, trace.num_layers)
        out = []
        for layer in chosen:
            g = explainmod.grad_attention(trace, layer, query, bundle)
            e = explainmod.layer_explanation(g)
            s = explainmod.layer_score(trace, layer, query, bundle)
            out.append({"layer": layer, "score": s.value,
                        "max": float(e.values.max()),
                        "mean": float(e.values.mean())})
        return out

    @app.post("/v1/perturb")
    async def perturb_endpoint(request: Request):
        payload = await read_payload(request)
        _, bundle = get_bundle(payload)
        method = payload.get("method", "legrad")
        if method not in explainmod.METHODS:
            raise ApiError(400, f"unknown method '{method}'")
        mode = payload.get("mode", "positive")
        if mode not in ("positive", "negative"):
            raise ApiError(400, f"unknown mode '{mode}'")
        class_source = payload.get("class_source", "predicted")
        if class_source not in ("predicted", "target"):
            raise ApiError(400, f"unknown class_source '{class_source}'")
        query = _parse_query(payload, bundle)
        if class_source == "target" and query.classifier is not bundle.classifier:
            raise ApiError(400, "class_source 'target' needs a label or "
                                "class_index query")
        layers = _parse_layers(payload, bundle)
        tensor = _decode_image(payload, bundle)
        try:
            heatmap = explainmod.explain(bundle, tensor, method, query,
                                         layer_range=layers)
            target = query.class_index if class_source == "target" else None
            curve = evalmod.perturb_curve(bundle, tensor, heatmap.values, mode,
                                          class_source=class_source,
                                          target_index=target)
        except (NumericError, ArithmeticError) as exc:
            raise ApiError(500, f"inference failed: {exc}")
        body = curve.to_json_dict()
        body["auc"] = evalmod.auc(curve, payload.get("auc_rule", "mean"))
        body["method"] = method
        return body

    return app
