"""HTTP/JSON facade over immutable model snapshots: scoring, counterfactual
generation, and schema introspection for the what-if client."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .engines import (
    CsgpConfig,
    GanModels,
    RgdConfig,
    countergan_generate,
    csgp_generate,
    load_gan,
    make_diff,
    rgd_generate,
)
from .errors import CfeedbackError, FormatError, NumericError, ParseError, SchemaError
from .predictors import (
    DECISION_THRESHOLD,
    AutoencoderModel,
    ClassifierModel,
    PrototypeSet,
    load_model,
    load_prototypes,
    predict,
)
from .profiles import ProfileSchema, normalize, profile_from_mapping, profile_to_mapping

METHODS = ("rgd", "csgp", "countergan")

CLASSIFIER_FILE = "classifier.json"
AUTOENCODER_FILE = "autoencoder.json"
PROTOTYPES_FILE = "prototypes.json"
GAN_FILE = "gan.json"


@dataclass(frozen=True)
class ServiceConfig:
    model_dir: str
    host: str = "127.0.0.1"
    port: int = 8000
    default_method: str = "countergan"
    enforce_bounds: bool | None = None  # None: per-engine default
    request_log_path: str | None = None


@dataclass
class ModelSnapshot:
    """Everything the handlers read; loaded once, never mutated."""

    classifier: ClassifierModel
    autoencoder: AutoencoderModel
    prototypes: PrototypeSet
    gan: GanModels
    schema: ProfileSchema
    file_hashes: dict[str, str] = field(default_factory=dict)


def _file_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def load_snapshot(model_dir: str) -> ModelSnapshot:
    """Load and cross-check all artifacts in a model directory."""
    paths = {
        "classifier": os.path.join(model_dir, CLASSIFIER_FILE),
        "autoencoder": os.path.join(model_dir, AUTOENCODER_FILE),
        "prototypes": os.path.join(model_dir, PROTOTYPES_FILE),
        "gan": os.path.join(model_dir, GAN_FILE),
    }
    for name, p in paths.items():
        if not os.path.exists(p):
            raise FormatError(f"model directory is missing {os.path.basename(p)}")
    classifier = load_model(paths["classifier"])
    if not isinstance(classifier, ClassifierModel):
        raise FormatError(f"{CLASSIFIER_FILE} does not contain a classifier")
    autoencoder = load_model(paths["autoencoder"])
    if not isinstance(autoencoder, AutoencoderModel):
        raise FormatError(f"{AUTOENCODER_FILE} does not contain an autoencoder")
    prototypes = load_prototypes(paths["prototypes"])
    gan = load_gan(paths["gan"])
    digests = {classifier.schema.digest(), autoencoder.schema.digest(), gan.schema.digest()}
    if len(digests) != 1:
        raise FormatError("model artifacts were trained against different schemas")
    return ModelSnapshot(
        classifier=classifier,
        autoencoder=autoencoder,
        prototypes=prototypes,
        gan=gan,
        schema=classifier.schema,
        file_hashes={name: _file_sha256(p) for name, p in paths.items()},
    )


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="cfeedback", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    try:
        snapshot = load_snapshot(config.model_dir)
    except CfeedbackError:
        snapshot = None
    app.state.snapshot = snapshot
    app.state.config = config

    def log_request(path: str, status: int, latency_ms: float) -> None:
        if not config.request_log_path:
            return
        line = json.dumps({"path": path, "status": status, "latency_ms": latency_ms})
        with open(config.request_log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": message})

    def require_snapshot():
        return app.state.snapshot

    @app.get("/health")
    def health():
        snap = require_snapshot()
        if snap is None:
            return {"status": "degraded", "model_hashes": {}}
        return {"status": "ok", "model_hashes": snap.file_hashes}

    @app.get("/models")
    def models():
        snap = require_snapshot()
        if snap is None:
            return error(503, "models not loaded")
        return {
            "classifier": snap.classifier.metadata,
            "autoencoder": snap.autoencoder.metadata,
            "gan": snap.gan.metadata,
            "schema_hash": snap.schema.digest(),
        }

    @app.get("/schema")
    def schema():
        snap = require_snapshot()
        if snap is None:
            return error(503, "models not loaded")
        body = {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind_json(),
                    "mutable": f.mutable,
                    "lower": f.lower,
                    "upper": f.upper,
                }
                for f in snap.schema.features
            ]
        }
        return JSONResponse(content=body, headers={"ETag": snap.schema.digest()})

    @app.post("/score")
    async def score(request: Request):
        t0 = time.perf_counter()
        snap = require_snapshot()
        if snap is None:
            return error(503, "models not loaded")
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return error(400, "request body is not valid JSON")
        if not isinstance(payload, dict):
            return error(400, "request body must be a JSON object keyed by feature name")
        try:
            raw = profile_from_mapping(payload, snap.schema)
        except (SchemaError, ParseError) as exc:
            return error(400, str(exc))
        value = predict(snap.classifier, normalize(raw, snap.schema))
        log_request("/score", 200, (time.perf_counter() - t0) * 1e3)
        return {"score": value, "approved": value >= DECISION_THRESHOLD}

    @app.post("/counterfactual")
    async def counterfactual(request: Request):
        t0 = time.perf_counter()
        snap = require_snapshot()
        if snap is None:
            return error(503, "models not loaded")
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return error(400, "request body is not valid JSON")
        if not isinstance(payload, dict) or "profile" not in payload:
            return error(400, "request body must contain a 'profile' object")
        method = payload.get("method", config.default_method)
        if method not in METHODS:
            return error(400, f"unknown method {method!r}; expected one of {list(METHODS)}")
        options = payload.get("options") or {}
        if not isinstance(options, dict):
            return error(400, "'options' must be an object")
        try:
            raw = profile_from_mapping(payload["profile"], snap.schema)
        except (SchemaError, ParseError) as exc:
            return error(400, str(exc))
        lo, hi = snap.schema.lowers, snap.schema.uppers
        if np.any(raw < lo) or np.any(raw > hi):
            bad = int(np.argmax((raw < lo) | (raw > hi)))
            return error(
                422,
                f"feature {snap.schema.names[bad]!r} value {raw[bad]} is outside "
                f"[{lo[bad]}, {hi[bad]}]",
            )

        enforce = options.get("enforce_bounds", config.enforce_bounds)
        x = normalize(raw, snap.schema)
        try:
            if method == "rgd":
                cfg = RgdConfig() if enforce is None else RgdConfig(enforce_bounds=bool(enforce))
                result = rgd_generate(snap.classifier, x, snap.schema, cfg, raw_input=raw)
            elif method == "csgp":
                cfg = CsgpConfig() if enforce is None else CsgpConfig(enforce_bounds=bool(enforce))
                result = csgp_generate(
                    snap.classifier, snap.autoencoder, snap.prototypes, x, snap.schema, cfg,
                    raw_input=raw,
                )
            else:
                result = countergan_generate(
                    snap.gan, snap.classifier, x, snap.schema, raw_input=raw,
                    enforce_bounds=True if enforce is None else bool(enforce),
                )
        except NumericError as exc:
            return error(500, f"counterfactual generation failed: {exc}")
        diff = make_diff(raw, result, snap.schema)
        latency_ms = (time.perf_counter() - t0) * 1e3
        log_request("/counterfactual", 200, latency_ms)
        return {
            "counterfactual": profile_to_mapping(result.raw_cf, snap.schema),
            "diff": [
                {"feature": e.feature, "old": e.old, "delta": e.delta, "new": e.new}
                for e in diff.entries
            ],
            "score_before": result.score_before,
            "score_after": result.score_after,
            "method": method,
            "latency_ms": latency_ms,
            "approved_before": result.score_before >= DECISION_THRESHOLD,
            "approved_after": result.score_after >= DECISION_THRESHOLD,
        }

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
