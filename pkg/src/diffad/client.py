"""HTTP client for the model-server protocol, plus backend adapters.

Endpoints (all relative to the server base URL):
  GET  /v1/info        -> JSON capability descriptor
  POST /v1/encode      image bytes -> tensor blob (latent)
  POST /v1/decode      tensor blob -> PNG bytes
  POST /v1/eps         framed {t, prompt} + latent blob -> eps blob
  POST /v1/features    image bytes -> framed {patch_size} + grid blob
  POST /v1/objectmask  image bytes (?threshold=) -> 8-bit PNG, 255 = object
"""

from __future__ import annotations

import io
from typing import Optional

import numpy as np
import requests
from PIL import Image

from .backends import BackendCapabilities, ObjectMask, PatchFeatures
from .errors import ProtocolError, RemoteModelError, ServerConnectionError
from .wire import decode_tensor, encode_tensor, pack_frame, unpack_frame

INFO_KEYS = ("latent_channels", "latent_side", "num_base_steps", "patch_size", "models")


class RemoteModelClient:
    """Thin connection-pooled client; one instance is safe to share across threads."""

    def __init__(self, base_url: str, timeout: float = 60.0, pool_size: int = 8):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = requests.Session()
        adapter = requests.adapters.HTTPAdapter(pool_connections=pool_size, pool_maxsize=pool_size)
        self._session.mount("http://", adapter)
        self._session.mount("https://", adapter)

    def close(self):
        self._session.close()

    def _request(self, method: str, endpoint: str, data: bytes | None = None, params=None) -> bytes:
        url = f"{self.base_url}{endpoint}"
        try:
            resp = self._session.request(
                method,
                url,
                data=data,
                params=params,
                timeout=self.timeout,
                headers={"Content-Type": "application/octet-stream"} if data is not None else None,
            )
        except requests.RequestException as exc:
            raise ServerConnectionError(str(exc), endpoint) from exc
        if resp.status_code != 200:
            message = ""
            try:
                message = resp.json().get("error", "")
            except ValueError:
                message = resp.text[:200]
            raise RemoteModelError(message or "request failed", endpoint, status=resp.status_code)
        return resp.content

    def info(self) -> dict:
        body = self._request("GET", "/v1/info")
        import json

        try:
            payload = json.loads(body)
        except ValueError as exc:
            raise ProtocolError(f"non-JSON info payload: {exc}", "/v1/info") from exc
        missing = [k for k in INFO_KEYS if k not in payload]
        if missing:
            raise ProtocolError(f"info payload missing keys {missing}", "/v1/info")
        return payload

    def encode_image(self, image_bytes: bytes) -> np.ndarray:
        return decode_tensor(self._request("POST", "/v1/encode", image_bytes), "/v1/encode")

    def decode_latent(self, latent: np.ndarray) -> bytes:
        return self._request("POST", "/v1/decode", encode_tensor(latent))

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: Optional[str] = None) -> np.ndarray:
        body = pack_frame({"t": int(base_t), "prompt": prompt}, encode_tensor(latent))
        return decode_tensor(self._request("POST", "/v1/eps", body), "/v1/eps")

    def features(self, image_bytes: bytes) -> PatchFeatures:
        raw = self._request("POST", "/v1/features", image_bytes)
        header, blob = unpack_frame(raw, "/v1/features")
        if "patch_size" not in header:
            raise ProtocolError("features response header lacks patch_size", "/v1/features")
        return PatchFeatures(grid=decode_tensor(blob, "/v1/features"), patch_size=int(header["patch_size"]))

    def object_mask(self, image_bytes: bytes, threshold: float = 0.1) -> ObjectMask:
        raw = self._request("POST", "/v1/objectmask", image_bytes, params={"threshold": threshold})
        try:
            img = Image.open(io.BytesIO(raw)).convert("L")
        except Exception as exc:
            raise ProtocolError(f"object mask is not a decodable image: {exc}", "/v1/objectmask") from exc
        return ObjectMask(pixels=(np.asarray(img) > 127).astype(np.uint8))

    def capabilities(self) -> BackendCapabilities:
        payload = self.info()
        return BackendCapabilities(
            latent_channels=int(payload["latent_channels"]),
            latent_side=int(payload["latent_side"]),
            num_base_steps=int(payload["num_base_steps"]),
        )


def image_to_png_bytes(image: np.ndarray) -> bytes:
    """Clip a float image to [0,1] and encode as PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    buf = io.BytesIO()
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data)).convert("RGB")
    return np.asarray(img, dtype=np.float32) / 255.0


class RemoteDenoiser:
    """DenoiserBackend over the wire."""

    def __init__(self, client: RemoteModelClient):
        self.client = client

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: Optional[str] = None) -> np.ndarray:
        return self.client.predict_eps(np.asarray(latent, dtype=np.float32), base_t, prompt)


class RemoteFeatures:
    def __init__(self, client: RemoteModelClient):
        self.client = client

    def extract(self, image: np.ndarray) -> PatchFeatures:
        return self.client.features(image_to_png_bytes(image))


class RemoteSegmenter:
    def __init__(self, client: RemoteModelClient, threshold: float = 0.1):
        self.client = client
        self.threshold = threshold

    def get_mask(self, image: np.ndarray, sample_id: Optional[str] = None) -> ObjectMask:
        return self.client.object_mask(image_to_png_bytes(image), self.threshold)


class RemoteCodec:
    """Encoder/decoder backed by the server's autoencoder endpoints."""

    def __init__(self, client: RemoteModelClient):
        self.client = client

    def encode(self, image: np.ndarray) -> np.ndarray:
        return self.client.encode_image(image_to_png_bytes(image))

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return png_bytes_to_image(self.client.decode_latent(latent))
