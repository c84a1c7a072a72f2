"""HTTP surface: POST /embed and GET /health.

Wire format (shared with the pipeline's embedding client):

    request:  {"space": "question"|"image"|"joint",
               "items": [{"instance_id", "text"?, "image_base64"?}, ...]}
    response: {"model_name", "dimension",
               "vectors": [{"instance_id", "vector"}, ...]}

Responses preserve item order and return unit-norm vectors. Status codes:
400 schema violation (including per-space field requirements and oversized
batches), 422 undecodable image, 503 while encoders are loading.
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import SPACES, ServiceConfig
from .encoders import EncoderLoadError, ImageDecodeError, build_encoder


class EmbedItem(BaseModel):
    instance_id: str
    text: Optional[str] = None
    image_base64: Optional[str] = None


class EmbedRequest(BaseModel):
    space: Literal["question", "image", "joint"]
    items: list[EmbedItem]


class EncoderRegistry:
    """Holds one shared, read-only encoder per space."""

    def __init__(self, config: ServiceConfig) -> None:
        self.config = config
        self.encoders = {
            space: build_encoder(config.encoders[space], space, config.dimension)
            for space in SPACES
        }
        self.loaded = False
        self.load_error: str | None = None

    def load(self) -> None:
        try:
            for encoder in self.encoders.values():
                encoder.load()
        except EncoderLoadError as exc:
            self.load_error = str(exc)
            raise
        self.loaded = True

    def try_load(self) -> None:
        try:
            self.load()
        except EncoderLoadError:
            pass  # stays unloaded; /health reports 503 with the error


def create_app(config: ServiceConfig | None = None, preload: bool = True) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="embedsvc")
    registry = EncoderRegistry(config)
    app.state.registry = registry
    if preload:
        registry.try_load()

    @app.exception_handler(RequestValidationError)
    async def schema_violation(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/health")
    async def health():
        payload = {
            "status": "ok" if registry.loaded else "loading",
            "models": {s: e.name for s, e in registry.encoders.items()},
            "dimensions": {s: e.dim for s, e in registry.encoders.items()},
        }
        if registry.load_error:
            payload["error"] = registry.load_error
        return JSONResponse(status_code=200 if registry.loaded else 503, content=payload)

    @app.post("/embed")
    async def embed(request: EmbedRequest):
        if not registry.loaded:
            return JSONResponse(
                status_code=503, content={"detail": "encoders are still loading"}
            )
        if len(request.items) > config.max_batch:
            return JSONResponse(
                status_code=400,
                content={
                    "detail": f"batch of {len(request.items)} exceeds the server cap "
                    f"of {config.max_batch}; send smaller chunks"
                },
            )
        encoder = registry.encoders[request.space]
        vectors = []
        for item in request.items:
            try:
                vec = encoder.encode(item.text, item.image_base64)
            except ImageDecodeError as exc:
                return JSONResponse(
                    status_code=422,
                    content={"detail": f"{item.instance_id}: {exc}"},
                )
            except ValueError as exc:
                return JSONResponse(
                    status_code=400,
                    content={"detail": f"{item.instance_id}: {exc}"},
                )
            vectors.append(
                {"instance_id": item.instance_id, "vector": [float(x) for x in vec]}
            )
        return {
            "model_name": encoder.name,
            "dimension": encoder.dim,
            "vectors": vectors,
        }

    return app
