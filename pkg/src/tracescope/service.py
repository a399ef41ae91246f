"""HTTP service: tracing, document viewing, takedown, and health.

Every 4xx/5xx body carries {"error": {"code", "message"}} and no stack
traces. Handlers are stateless apart from the shared immutable index and
the atomically swapped takedown set, so the app is safe under concurrent
requests.
"""

from __future__ import annotations

import asyncio
import os
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .index_builder import ShardLoadError
from .pipeline import TraceConfig, TraceConfigError, Tracer
from .search_engine import SearchEngine, UnknownDocumentError

ENV_INDEX_ROOT = "TRACESCOPE_INDEX_ROOT"
ENV_LISTEN = "TRACESCOPE_LISTEN"
ENV_ADMIN_TOKEN = "TRACESCOPE_ADMIN_TOKEN"
ADMIN_HEADER = "x-admin-token"

_OPTION_KEYS = {
    "keep_fraction", "max_docs_per_span", "snippet_window", "extended_window",
    "high_threshold", "medium_threshold", "normalization_coefficient", "seed",
}


@dataclass
class ServiceConfig:
    index_root: Path
    listen: str = "127.0.0.1:8080"
    parallelism: int = 1
    trace_defaults: TraceConfig = field(default_factory=TraceConfig)
    body_limit_bytes: int = 8 * 1024 * 1024
    timeout_seconds: float = 30.0
    admin_token: str | None = None

    def __post_init__(self):
        self.index_root = Path(self.index_root)
        if self.timeout_seconds <= 0:
            raise ValueError("timeout must be positive")
        if self.body_limit_bytes < 1024 * 1024:
            raise ValueError("request body limit must be at least 1 MiB")

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        root = os.environ.get(ENV_INDEX_ROOT)
        if not root:
            raise ValueError(f"{ENV_INDEX_ROOT} is not set")
        return cls(
            index_root=Path(root),
            listen=os.environ.get(ENV_LISTEN, "127.0.0.1:8080"),
            admin_token=os.environ.get(ENV_ADMIN_TOKEN),
        )


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": {"code": code, "message": message}})


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def parse_trace_options(options: dict | None, defaults: TraceConfig) -> TraceConfig:
    if not options:
        return defaults
    unknown = set(options) - _OPTION_KEYS
    if unknown:
        raise ApiError(400, "bad_request", f"unknown options: {sorted(unknown)}")
    kwargs = {k: v for k, v in options.items() if k != "seed"}
    if "seed" in options:
        kwargs["rng_seed"] = options["seed"]
    try:
        base = {f: getattr(defaults, f) for f in (
            "keep_fraction", "max_docs_per_span", "snippet_window", "extended_window",
            "high_threshold", "medium_threshold", "normalization_coefficient", "rng_seed")}
        base.update(kwargs)
        return TraceConfig(**base)
    except (TraceConfigError, TypeError) as e:
        raise ApiError(400, "bad_request", str(e)) from e


def create_app(config: ServiceConfig) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        try:
            engine = SearchEngine(config.index_root, fetch_parallelism=config.parallelism)
            state.engine = engine
            state.tracer = Tracer(engine, config.trace_defaults, parallelism=config.parallelism)
        except (ShardLoadError, OSError) as e:
            state.load_error = str(e)
        yield
        if state.tracer is not None:
            state.tracer.close()
        if state.engine is not None:
            state.engine.close()

    app = FastAPI(title="tracescope", docs_url=None, redoc_url=None, lifespan=lifespan)
    # the explorer UI is served as static files from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = app.state
    state.config = config
    state.engine = None
    state.tracer = None
    state.load_error = None

    @app.middleware("http")
    async def _limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length is not None and length.isdigit() and int(length) > config.body_limit_bytes:
            return _error(413, "payload_too_large",
                          f"request body exceeds {config.body_limit_bytes} bytes")
        return await call_next(request)

    @app.exception_handler(ApiError)
    async def _api_error(_request, exc: ApiError):
        return _error(exc.status, exc.code, exc.message)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request, exc: RequestValidationError):
        return _error(400, "bad_request", "malformed request body")

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_request, exc: StarletteHTTPException):
        return _error(exc.status_code, "http_error", str(exc.detail))

    @app.exception_handler(Exception)
    async def _internal_error(_request, exc: Exception):
        return _error(500, "internal_error", "internal server error")

    def require_loaded() -> Tracer:
        if state.load_error is not None:
            raise ApiError(503, "index_unavailable", state.load_error)
        if state.tracer is None:
            raise ApiError(503, "index_unavailable", "index not loaded yet")
        return state.tracer

    @app.get("/healthz")
    async def healthz():
        if state.load_error is not None:
            return _error(503, "index_unavailable", state.load_error)
        if state.engine is None:
            return _error(503, "index_unavailable", "index not loaded yet")
        return {
            "status": "ok",
            "shards_loaded": len(state.engine.shards),
            "num_tokens": state.engine.num_tokens,
        }

    @app.post("/api/v1/trace")
    async def trace(request: Request):
        tracer = require_loaded()
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "bad_request", "body must be a JSON object")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_request", "body must be a JSON object")
        response_text = body.get("response")
        if not isinstance(response_text, str) or not response_text:
            raise ApiError(400, "bad_request", "field 'response' must be a non-empty string")
        prompt = body.get("prompt", "")
        if not isinstance(prompt, str):
            raise ApiError(400, "bad_request", "field 'prompt' must be a string")
        options = body.get("options")
        if options is not None and not isinstance(options, dict):
            raise ApiError(400, "bad_request", "field 'options' must be an object")
        trace_config = parse_trace_options(options, config.trace_defaults)
        try:
            result = await asyncio.wait_for(
                run_in_threadpool(tracer.trace, prompt, response_text, trace_config),
                timeout=config.timeout_seconds,
            )
        except asyncio.TimeoutError:
            raise ApiError(504, "timeout", f"trace exceeded {config.timeout_seconds}s")
        return result.to_payload(include_latency=True)

    @app.get("/api/v1/docs/{shard_id}/{doc_id}")
    async def document_view(shard_id: int, doc_id: int, center: int | None = None,
                            window: int = 500):
        tracer = require_loaded()
        engine = tracer.engine
        if not 0 <= shard_id < len(engine.shards):
            raise ApiError(404, "not_found", f"unknown shard {shard_id}")
        shard = engine.shards[shard_id]
        if not 0 <= doc_id < shard.num_docs:
            raise ApiError(404, "not_found", f"unknown document {shard_id}:{doc_id}")
        if engine.is_taken_down(shard_id, doc_id):
            raise ApiError(404, "not_found", f"document {shard_id}:{doc_id} is unavailable")
        start, end = shard.doc_bounds(doc_id)
        doc_tokens = end - start
        if window < 1:
            raise ApiError(400, "bad_request", "window must be >= 1")
        if window > 100_000:
            raise ApiError(400, "bad_request", "window too large")
        if center is None:
            center = doc_tokens // 2
        if not 0 <= center < max(doc_tokens, 1):
            raise ApiError(400, "bad_request", f"center must be in [0, {doc_tokens})")
        position = start + center
        _doc, lo, hi = shard.window(position, window)
        meta = shard.meta[doc_id]
        return {
            "shard_id": shard_id,
            "doc_id": doc_id,
            "source": meta.get("source", ""),
            "stage": meta.get("stage", "pretraining"),
            "text": shard.decode_range(lo, hi),
            "window_token_range": [lo - start, hi - start],
            "total_doc_tokens": doc_tokens,
        }

    @app.post("/api/v1/takedown")
    async def takedown(request: Request):
        tracer = require_loaded()
        token = request.headers.get(ADMIN_HEADER)
        if not config.admin_token or token != config.admin_token:
            raise ApiError(401, "unauthorized", "missing or invalid admin token")
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "bad_request", "body must be a JSON object")
        documents = body.get("documents") if isinstance(body, dict) else None
        if not isinstance(documents, list):
            raise ApiError(400, "bad_request", "field 'documents' must be a list")
        pairs = []
        for entry in documents:
            if not isinstance(entry, dict) or "shard_id" not in entry or "doc_id" not in entry:
                raise ApiError(400, "bad_request", "each document needs shard_id and doc_id")
            pairs.append((int(entry["shard_id"]), int(entry["doc_id"])))
        try:
            ack = tracer.engine.take_down(pairs)
        except UnknownDocumentError as e:
            ack = e.ack
            if ack.applied == 0 and ack.already_present == 0:
                raise ApiError(422, "unknown_documents",
                               f"no such documents: {ack.unknown}")
        return {"applied": ack.applied, "already_present": ack.already_present,
                "unknown": len(ack.unknown)}

    return app


def create_app_from_env() -> FastAPI:
    return create_app(ServiceConfig.from_env())
