"""FastAPI application exposing /health and /embed.

Environment:
  EMBED_MODEL_NAME  model to serve (default ``bert-base-cased``; use
                    ``hashed-<dim>`` for the weight-free backend)
  EMBED_BATCH_CAP   maximum texts per request (default 64)

Responses are deterministic for fixed model weights: inference runs with
dropout disabled and the per-token vectors are mean-pooled onto the
caller's token boundaries (or a default word split when none are sent).
"""

from __future__ import annotations

import logging
import os

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .encoders import default_token_spans, load_encoder

logger = logging.getLogger("embed_service")

DEFAULT_MODEL = "bert-base-cased"
DEFAULT_BATCH_CAP = 64


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)
    tokens: list[list[tuple[int, int]]] | None = None


class EmbedResponse(BaseModel):
    dim: int
    vectors: list[list[list[float]]]
    pooled: list[list[float]]


class HealthResponse(BaseModel):
    status: str
    model_name: str
    dim: int
    pooling: str = "final-layer-mean"


def create_app(model_name: str | None = None, batch_cap: int | None = None) -> FastAPI:
    name = model_name or os.environ.get("EMBED_MODEL_NAME", DEFAULT_MODEL)
    cap = batch_cap or int(os.environ.get("EMBED_BATCH_CAP", DEFAULT_BATCH_CAP))
    app = FastAPI(title="embed-service")
    try:
        app.state.encoder = load_encoder(name)
        logger.info("loaded encoder %s (dim %d)", name, app.state.encoder.dim)
    except Exception:
        logger.exception("could not load encoder %r; /embed will return 503", name)
        app.state.encoder = None
    app.state.model_name = name
    app.state.batch_cap = cap

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health", response_model=HealthResponse)
    def health():
        encoder = app.state.encoder
        return HealthResponse(
            status="ok" if encoder is not None else "model_not_loaded",
            model_name=app.state.model_name,
            dim=encoder.dim if encoder is not None else 0,
        )

    @app.post("/embed", response_model=EmbedResponse)
    def embed(body: EmbedRequest):
        encoder = app.state.encoder
        if encoder is None:
            return JSONResponse(status_code=503, content={"detail": "model not loaded"})
        if len(body.texts) > app.state.batch_cap:
            return JSONResponse(
                status_code=413,
                content={"detail": f"batch of {len(body.texts)} exceeds cap "
                                   f"{app.state.batch_cap}"},
            )
        if any(not text for text in body.texts):
            return JSONResponse(status_code=400, content={"detail": "texts must be non-empty"})
        if body.tokens is not None and len(body.tokens) != len(body.texts):
            return JSONResponse(
                status_code=400,
                content={"detail": "tokens must align one list per text"},
            )
        vectors = []
        pooled = []
        for idx, text in enumerate(body.texts):
            spans = body.tokens[idx] if body.tokens is not None else default_token_spans(text)
            for a, b in spans:
                if not (0 <= a < b <= len(text)):
                    return JSONResponse(
                        status_code=400,
                        content={"detail": f"token span ({a}, {b}) outside text {idx}"},
                    )
            per_token, text_pooled = encoder.encode(text, spans)
            vectors.append([v.tolist() for v in per_token])
            pooled.append(text_pooled.tolist())
        return EmbedResponse(dim=encoder.dim, vectors=vectors, pooled=pooled)

    return app
