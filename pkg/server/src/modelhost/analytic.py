"""Model-free conformance bundle.

Analytic behaviors on the exact same protocol as the real models: encode is
an 8x mean-pool downsample, the noise prediction is the closed-form optimal
estimate for a unit Gaussian world, features are per-patch means, and the
object mask is all-ones.  Everything is a pure function of the request, so
payloads are identical across restarts.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

FACTOR = 8
PATCH = 8
NUM_BASE_STEPS = 1000
BETA_START = 0.00085
BETA_END = 0.012


def _alpha_bars() -> np.ndarray:
    betas = np.linspace(np.sqrt(BETA_START), np.sqrt(BETA_END), NUM_BASE_STEPS) ** 2
    return np.cumprod(1.0 - betas)


class StubBundle:
    """Deterministic analytic implementations of all six endpoints."""

    def __init__(self):
        self.alpha_bars = _alpha_bars()

    def info(self) -> dict:
        return {
            "latent_channels": 3,
            "latent_side": 256 // FACTOR,
            "num_base_steps": NUM_BASE_STEPS,
            "patch_size": PATCH,
            "models": {
                "denoiser": "analytic-gaussian-stub",
                "features": "mean-pool-stub",
                "segmenter": "all-ones-stub",
            },
        }

    @staticmethod
    def _decode_image(image_bytes: bytes) -> np.ndarray:
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        return np.asarray(img, dtype=np.float32) / 255.0

    def encode_image(self, image_bytes: bytes) -> np.ndarray:
        arr = self._decode_image(image_bytes)
        h, w, _ = arr.shape
        if h % FACTOR or w % FACTOR:
            raise ValueError(f"image sides ({h}, {w}) must be divisible by {FACTOR}")
        pooled = arr.reshape(h // FACTOR, FACTOR, w // FACTOR, FACTOR, 3).mean((1, 3))
        return (pooled.transpose(2, 0, 1) * 2.0 - 1.0).astype(np.float32)

    def decode_latent(self, latent: np.ndarray) -> bytes:
        if latent.ndim != 3:
            raise ValueError(f"latent must be rank-3, got shape {latent.shape}")
        arr = np.clip((latent.transpose(1, 2, 0) + 1.0) / 2.0, 0.0, 1.0)
        up = np.repeat(np.repeat(arr, FACTOR, axis=0), FACTOR, axis=1)
        buf = io.BytesIO()
        Image.fromarray((up * 255.0 + 0.5).astype(np.uint8)).save(buf, format="PNG")
        return buf.getvalue()

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: str | None) -> np.ndarray:
        if not (0 <= base_t < NUM_BASE_STEPS):
            raise ValueError(f"timestep {base_t} out of range [0, {NUM_BASE_STEPS})")
        # optimal estimate for z0 ~ N(0, 1): eps = sqrt(1 - alpha_bar) * z_t
        a = float(self.alpha_bars[base_t])
        return (np.sqrt(1.0 - a) * latent.astype(np.float64)).astype(np.float32)

    def features(self, image_bytes: bytes) -> tuple[np.ndarray, int]:
        arr = self._decode_image(image_bytes)
        h, w, _ = arr.shape
        if h % PATCH or w % PATCH:
            raise ValueError(f"image sides ({h}, {w}) must be divisible by {PATCH}")
        grid = arr.reshape(h // PATCH, PATCH, w // PATCH, PATCH, 3).mean((1, 3))
        return grid.astype(np.float32), PATCH

    def object_mask(self, image_bytes: bytes, threshold: float) -> bytes:
        img = Image.open(io.BytesIO(image_bytes))
        buf = io.BytesIO()
        Image.fromarray(np.full((img.height, img.width), 255, dtype=np.uint8)).save(buf, format="PNG")
        return buf.getvalue()
