"""FastAPI application implementing the wire protocol over a model bundle."""

from __future__ import annotations

import asyncio

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .wire import WireError, blob_to_tensor, read_frame, tensor_to_blob, write_frame

OCTET = "application/octet-stream"


def create_app(bundle, max_concurrent: int = 8) -> FastAPI:
    app = FastAPI(title="modelhost", docs_url=None, redoc_url=None)
    semaphore = asyncio.Semaphore(max_concurrent)

    def bad_request(message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=400)

    @app.exception_handler(404)
    async def not_found(request: Request, exc):
        return JSONResponse({"error": f"unknown endpoint {request.url.path}"}, status_code=404)

    @app.exception_handler(405)
    async def bad_method(request: Request, exc):
        return JSONResponse({"error": f"method not allowed on {request.url.path}"}, status_code=405)

    @app.exception_handler(Exception)
    async def internal(request: Request, exc):
        return JSONResponse({"error": f"internal error: {exc}"}, status_code=500)

    async def _run(fn, *args):
        async with semaphore:
            return await asyncio.to_thread(fn, *args)

    @app.get("/v1/info")
    async def info():
        return JSONResponse(bundle.info())

    @app.post("/v1/encode")
    async def encode(request: Request):
        body = await request.body()
        try:
            latent = await _run(bundle.encode_image, body)
        except (ValueError, WireError) as exc:
            return bad_request(str(exc))
        return Response(tensor_to_blob(latent), media_type=OCTET)

    @app.post("/v1/decode")
    async def decode(request: Request):
        body = await request.body()
        try:
            latent = blob_to_tensor(body)
            png = await _run(bundle.decode_latent, latent)
        except (ValueError, WireError) as exc:
            return bad_request(str(exc))
        return Response(png, media_type="image/png")

    @app.post("/v1/eps")
    async def eps(request: Request):
        body = await request.body()
        try:
            header, blob = read_frame(body)
            if "t" not in header:
                return bad_request("eps frame header lacks 't'")
            latent = blob_to_tensor(blob)
            out = await _run(bundle.predict_eps, latent, int(header["t"]), header.get("prompt"))
        except (ValueError, WireError) as exc:
            return bad_request(str(exc))
        return Response(tensor_to_blob(out), media_type=OCTET)

    @app.post("/v1/features")
    async def features(request: Request):
        body = await request.body()
        try:
            grid, patch_size = await _run(bundle.features, body)
        except (ValueError, WireError) as exc:
            return bad_request(str(exc))
        frame = write_frame({"patch_size": patch_size}, tensor_to_blob(grid))
        return Response(frame, media_type=OCTET)

    @app.post("/v1/objectmask")
    async def objectmask(request: Request, threshold: float = 0.1):
        body = await request.body()
        try:
            png = await _run(bundle.object_mask, body, threshold)
        except (ValueError, WireError) as exc:
            return bad_request(str(exc))
        return Response(png, media_type="image/png")

    return app
