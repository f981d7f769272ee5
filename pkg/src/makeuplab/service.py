"""HTTP inference service.

All bodies are JSON; images travel as base64-encoded 8-bit PNG. Responses
echo the acknowledged target so clients can verify agreement. Schema
version "1":

  POST /estimate   {"image_png": b64, "region"?}            -> {"color", "region", ...}
  POST /synthesize {"image_png": b64, "target": {L,a,b}, "region"?}
                                                            -> {"image_png", "target_echo", ...}
  POST /transfer   {"source_png": b64, "reference_png": b64, "region"?}
                                                            -> {"image_png", "estimated", ...}
  GET  /shades                                              -> {"shades": [...]}
  GET  /health                                              -> {"status", "version", ...}

Lab values are serialized with 4 fractional digits. Malformed inputs yield
400, oversize uploads 413, and unexpected failures 500 with no internals.
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import SCHEMA_VERSION, __version__
from .color import LabColor
from .errors import DecodeError, MakeupLabError
from .imgio import decode_png, encode_png
from .session import InferenceSession


class TargetBody(BaseModel):
    L: float
    a: float
    b: float


class EstimateBody(BaseModel):
    image_png: str
    region: str | None = None


class SynthesizeBody(BaseModel):
    image_png: str
    target: TargetBody
    region: str | None = None


class TransferBody(BaseModel):
    source_png: str
    reference_png: str
    region: str | None = None


def _round_lab(c: LabColor) -> dict:
    return {"L": round(c.L, 4), "a": round(c.a, 4), "b": round(c.b, 4)}


def _decode_image(b64: str, limit: int):
    try:
        blob = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as e:
        raise DecodeError(f"invalid base64 image payload: {e}") from e
    if len(blob) > limit:
        raise _Oversize()
    return decode_png(blob)


class _Oversize(Exception):
    pass


def build_app(session: InferenceSession) -> FastAPI:
    app = FastAPI(title="makeuplab", version=__version__)
    limit = session.config.max_upload_bytes

    @app.exception_handler(_Oversize)
    async def oversize_handler(request: Request, exc: _Oversize):
        return JSONResponse(status_code=413, content={"error": "upload too large"})

    @app.exception_handler(MakeupLabError)
    async def domain_handler(request: Request, exc: MakeupLabError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body"})

    @app.exception_handler(Exception)
    async def internal_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": "internal error"})

    @app.middleware("http")
    async def reject_oversize(request: Request, call_next):
        length = request.headers.get("content-length")
        # base64 inflates by 4/3; allow headroom for two images plus fields.
        if length and length.isdigit() and int(length) > 3 * limit:
            return JSONResponse(status_code=413, content={"error": "upload too large"})
        return await call_next(request)

    @app.get("/health")
    async def health():
        return {
            "status": "ok",
            "version": __version__,
            "schema_version": SCHEMA_VERSION,
            "regions": sorted(session.models),
        }

    @app.post("/estimate")
    async def estimate(body: EstimateBody):
        image = _decode_image(body.image_png, limit)
        color = session.estimate_color(image, body.region)
        return {
            "schema_version": SCHEMA_VERSION,
            "color": _round_lab(color),
            "region": body.region or "lips",
        }

    @app.post("/synthesize")
    async def synthesize(body: SynthesizeBody):
        image = _decode_image(body.image_png, limit)
        target = LabColor(body.target.L, body.target.a, body.target.b)
        out = session.synthesize(image, target, body.region)
        return {
            "schema_version": SCHEMA_VERSION,
            "image_png": base64.b64encode(encode_png(out)).decode(),
            "target_echo": {"L": body.target.L, "a": body.target.a, "b": body.target.b},
            "region": body.region or "lips",
        }

    @app.post("/transfer")
    async def transfer(body: TransferBody):
        source = _decode_image(body.source_png, limit)
        reference = _decode_image(body.reference_png, limit)
        out, estimated = session.transfer(source, reference, body.region)
        return {
            "schema_version": SCHEMA_VERSION,
            "image_png": base64.b64encode(encode_png(out)).decode(),
            "estimated": _round_lab(estimated),
            "region": body.region or "lips",
        }

    @app.get("/shades")
    async def shades():
        return {
            "schema_version": SCHEMA_VERSION,
            "shades": [
                {"id": e.shade_id, "name": e.name, "color": _round_lab(e.color)}
                for e in session.catalog.entries
            ],
        }

    return app


def serve(session: InferenceSession, host: str = "127.0.0.1", port: int = 8008) -> None:
    import uvicorn

    uvicorn.run(build_app(session), host=host, port=port, log_level="warning")
