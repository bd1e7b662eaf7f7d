"""Model-free loopback server implementing the wire protocol.

Analytic behaviors: encode is an 8x mean-pool downsample, eps is the
closed-form Gaussian denoiser for a unit world, features are per-patch
means, the object mask is all-ones.  Deterministic across restarts, so
protocol conformance tests can assert bit-exact payloads.
"""

from __future__ import annotations

import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .backends import GaussianWorldModel, analytic_gaussian_eps
from .errors import DiffadError
from .schedule import ScheduleConfig, build_schedule
from .wire import encode_tensor, decode_tensor, pack_frame, unpack_frame

STUB_FACTOR = 8
STUB_PATCH = 8


class StubModelState:
    """Shared immutable state for all handler threads."""

    def __init__(self, schedule_config: ScheduleConfig | None = None):
        self.schedule = build_schedule(schedule_config or ScheduleConfig())
        self.world = GaussianWorldModel(mean=0.0, std=1.0)

    def info(self) -> dict:
        return {
            "latent_channels": 3,
            "latent_side": 256 // STUB_FACTOR,
            "num_base_steps": self.schedule.num_base_steps,
            "patch_size": STUB_PATCH,
            "models": {
                "denoiser": "analytic-gaussian-stub",
                "features": "mean-pool-stub",
                "segmenter": "all-ones-stub",
            },
        }

    def encode(self, image_bytes: bytes) -> np.ndarray:
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
        h, w, _ = arr.shape
        if h % STUB_FACTOR or w % STUB_FACTOR:
            raise ValueError(f"image sides ({h}, {w}) must be divisible by {STUB_FACTOR}")
        pooled = arr.reshape(h // STUB_FACTOR, STUB_FACTOR, w // STUB_FACTOR, STUB_FACTOR, 3).mean((1, 3))
        return (pooled.transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)

    def decode(self, latent: np.ndarray) -> bytes:
        if latent.ndim != 3:
            raise ValueError(f"latent must be rank-3, got shape {latent.shape}")
        arr = np.clip((latent.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)
        up = np.repeat(np.repeat(arr, STUB_FACTOR, axis=0), STUB_FACTOR, axis=1)
        buf = io.BytesIO()
        Image.fromarray((up * 255.0 + 0.5).astype(np.uint8)).save(buf, format="PNG")
        return buf.getvalue()

    def eps(self, latent: np.ndarray, base_t: int) -> np.ndarray:
        if not (0 <= base_t < self.schedule.num_base_steps):
            raise ValueError(f"timestep {base_t} out of range")
        return analytic_gaussian_eps(latent, base_t, self.world, self.schedule).astype(np.float32)

    def features_grid(self, image_bytes: bytes) -> np.ndarray:
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
        h, w, _ = arr.shape
        if h % STUB_PATCH or w % STUB_PATCH:
            raise ValueError(f"image sides ({h}, {w}) must be divisible by {STUB_PATCH}")
        return arr.reshape(h // STUB_PATCH, STUB_PATCH, w // STUB_PATCH, STUB_PATCH, 3).mean((1, 3)).astype(np.float32)

    def object_mask_png(self, image_bytes: bytes, threshold: float) -> bytes:
        img = Image.open(io.BytesIO(image_bytes))
        buf = io.BytesIO()
        Image.fromarray(np.full((img.height, img.width), 255, dtype=np.uint8)).save(buf, format="PNG")
        return buf.getvalue()


class _StubHandler(BaseHTTPRequestHandler):
    state: StubModelState  # injected by make_stub_server

    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # silence request logging in tests
        pass

    def _reply(self, status: int, body: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _reply_error(self, status: int, message: str):
        self._reply(status, json.dumps({"error": message}).encode(), "application/json")

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length)

    def do_GET(self):
        if urlparse(self.path).path == "/v1/info":
            self._reply(200, json.dumps(self.state.info(), sort_keys=True).encode(), "application/json")
        else:
            self._reply_error(404, f"unknown endpoint {self.path}")

    def do_POST(self):
        parsed = urlparse(self.path)
        body = self._read_body()
        try:
            if parsed.path == "/v1/encode":
                self._reply(200, encode_tensor(self.state.encode(body)), "application/octet-stream")
            elif parsed.path == "/v1/decode":
                latent = decode_tensor(body, "/v1/decode")
                self._reply(200, self.state.decode(latent), "image/png")
            elif parsed.path == "/v1/eps":
                header, blob = unpack_frame(body, "/v1/eps")
                if "t" not in header:
                    raise ValueError("eps frame header lacks 't'")
                latent = decode_tensor(blob, "/v1/eps")
                out = self.state.eps(latent, int(header["t"]))
                self._reply(200, encode_tensor(out), "application/octet-stream")
            elif parsed.path == "/v1/features":
                grid = self.state.features_grid(body)
                frame = pack_frame({"patch_size": STUB_PATCH}, encode_tensor(grid))
                self._reply(200, frame, "application/octet-stream")
            elif parsed.path == "/v1/objectmask":
                params = parse_qs(parsed.query)
                threshold = float(params.get("threshold", ["0.1"])[0])
                self._reply(200, self.state.object_mask_png(body, threshold), "image/png")
            else:
                self._reply_error(404, f"unknown endpoint {parsed.path}")
        except (DiffadError, ValueError) as exc:
            self._reply_error(400, str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            self._reply_error(500, f"internal error: {exc}")


def make_stub_server(port: int = 0, schedule_config: ScheduleConfig | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) a stub server bound to localhost:port."""
    state = StubModelState(schedule_config)
    handler = type("BoundStubHandler", (_StubHandler,), {"state": state})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


class StubServer:
    """Context manager running the stub in a daemon thread."""

    def __init__(self, port: int = 0, schedule_config: ScheduleConfig | None = None):
        self._server = make_stub_server(port, schedule_config)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
        return False
