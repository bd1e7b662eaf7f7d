"""Pretrained-model bundle: latent-diffusion autoencoder + UNet, ViT-S/8
patch features, and an instance segmenter, all behind lazy imports.

Loading happens eagerly in the constructor so a broken environment refuses
to start instead of failing mid-request.  Forward passes are serialized per
device; text embeddings are cached per distinct prompt and the empty-prompt
embedding is computed once at startup.
"""

from __future__ import annotations

import io
import threading

import numpy as np
from PIL import Image

from .config import ServerConfig


class ModelLoadError(RuntimeError):
    pass


def _require(module_name: str, hint: str):
    try:
        return __import__(module_name)
    except ImportError as exc:
        raise ModelLoadError(
            f"cannot import {module_name!r} ({exc}); install the [models] extra: {hint}"
        ) from exc


class RealBundle:
    """Serves the released pretrained models over the protocol."""

    def __init__(self, config: ServerConfig):
        self.config = config
        torch = _require("torch", "pip install torch")
        _require("diffusers", "pip install diffusers")
        _require("transformers", "pip install transformers")
        from diffusers import AutoencoderKL, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer

        self.torch = torch
        self.device = torch.device(config.device)
        if config.deterministic:
            torch.manual_seed(0)
            torch.use_deterministic_algorithms(True, warn_only=True)

        model_id = config.diffusion_model
        try:
            self.vae = AutoencoderKL.from_pretrained(model_id, subfolder="vae").to(self.device).eval()
            self.unet = UNet2DConditionModel.from_pretrained(model_id, subfolder="unet").to(self.device).eval()
            self.tokenizer = CLIPTokenizer.from_pretrained(model_id, subfolder="tokenizer")
            self.text_encoder = CLIPTextModel.from_pretrained(model_id, subfolder="text_encoder").to(self.device).eval()
        except Exception as exc:
            raise ModelLoadError(f"failed to load diffusion model {model_id!r}: {exc}") from exc

        try:
            hub_repo = "facebookresearch/dino:main"
            self.dino = torch.hub.load(hub_repo, config.feature_model).to(self.device).eval()
            self.dino_patch = int(self.dino.patch_embed.patch_size)
        except Exception as exc:
            raise ModelLoadError(
                f"failed to load feature extractor {config.feature_model!r}: {exc}"
            ) from exc

        self.segmenter = self._load_segmenter()

        self.scaling = float(getattr(self.vae.config, "scaling_factor", 0.18215))
        self.latent_channels = int(self.unet.config.in_channels)
        self.sample_size = int(self.unet.config.sample_size)
        self.num_base_steps = 1000
        self._lock = threading.Lock()
        self._embedding_cache: dict[str, object] = {}
        # empty-prompt embedding computed once; absent prompt maps to it
        self._null_embedding = self._embed("")

    def _load_segmenter(self):
        """Instance segmenter via detectron2; optional but load-checked when configured."""
        if not self.config.segmenter_config:
            return None
        try:
            detectron2 = _require("detectron2", "install detectron2 and the released checkpoint")
            from detectron2.config import get_cfg
            from detectron2.engine import DefaultPredictor

            cfg = get_cfg()
            cfg.merge_from_file(self.config.segmenter_config)
            if self.config.segmenter_weights:
                cfg.MODEL.WEIGHTS = self.config.segmenter_weights
            cfg.MODEL.DEVICE = self.config.device
            # keep low-scoring detections; the endpoint filters by threshold
            cfg.MODEL.ROI_HEADS.SCORE_THRESH_TEST = 0.0
            return DefaultPredictor(cfg)
        except ModelLoadError:
            raise
        except Exception as exc:
            raise ModelLoadError(f"failed to load segmenter: {exc}") from exc

    # --- helpers -----------------------------------------------------------

    def _embed(self, prompt: str):
        if prompt in self._embedding_cache:
            return self._embedding_cache[prompt]
        torch = self.torch
        tokens = self.tokenizer(
            prompt,
            padding="max_length",
            max_length=self.tokenizer.model_max_length,
            truncation=True,
            return_tensors="pt",
        ).input_ids.to(self.device)
        with torch.no_grad():
            embedding = self.text_encoder(tokens)[0]
        self._embedding_cache[prompt] = embedding
        return embedding

    @staticmethod
    def _to_image_tensor(image_bytes: bytes, torch, device):
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        arr = np.asarray(img, dtype=np.float32) / 255.0
        return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).to(device), img.size

    # --- endpoints ---------------------------------------------------------

    def info(self) -> dict:
        return {
            "latent_channels": self.latent_channels,
            "latent_side": self.sample_size,
            "num_base_steps": self.num_base_steps,
            "patch_size": self.dino_patch,
            "models": {
                "denoiser": self.config.diffusion_model,
                "features": self.config.feature_model,
                "segmenter": self.config.segmenter_model if self.segmenter else None,
            },
        }

    def encode_image(self, image_bytes: bytes) -> np.ndarray:
        torch = self.torch
        x, _ = self._to_image_tensor(image_bytes, torch, self.device)
        x = x * 2.0 - 1.0
        with self._lock, torch.no_grad():
            posterior = self.vae.encode(x).latent_dist
            latent = posterior.mean * self.scaling
        return latent[0].float().cpu().numpy()

    def decode_latent(self, latent: np.ndarray) -> bytes:
        torch = self.torch
        z = torch.from_numpy(np.asarray(latent, dtype=np.float32)).unsqueeze(0).to(self.device)
        with self._lock, torch.no_grad():
            img = self.vae.decode(z / self.scaling).sample
        arr = ((img[0].float().cpu().permute(1, 2, 0).numpy() + 1.0) / 2.0).clip(0.0, 1.0)
        buf = io.BytesIO()
        Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(buf, format="PNG")
        return buf.getvalue()

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: str | None) -> np.ndarray:
        if not (0 <= base_t < self.num_base_steps):
            raise ValueError(f"timestep {base_t} out of range [0, {self.num_base_steps})")
        torch = self.torch
        z = torch.from_numpy(np.asarray(latent, dtype=np.float32)).unsqueeze(0).to(self.device)
        embedding = self._null_embedding if prompt is None else self._embed(prompt)
        t = torch.tensor([base_t], device=self.device)
        with self._lock, torch.no_grad():
            eps = self.unet(z, t, encoder_hidden_states=embedding).sample
        return eps[0].float().cpu().numpy()

    def features(self, image_bytes: bytes) -> tuple[np.ndarray, int]:
        torch = self.torch
        x, (w, h) = self._to_image_tensor(image_bytes, torch, self.device)
        mean = torch.tensor([0.485, 0.456, 0.406], device=self.device).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225], device=self.device).view(1, 3, 1, 1)
        x = (x - mean) / std
        p = self.dino_patch
        if h % p or w % p:
            raise ValueError(f"image sides ({h}, {w}) must be divisible by patch size {p}")
        with self._lock, torch.no_grad():
            # final-block patch tokens; the class token is dropped
            tokens = self.dino.get_intermediate_layers(x, n=1)[0]
        patches = tokens[0, 1:, :].float().cpu().numpy()
        grid = patches.reshape(h // p, w // p, -1)
        return grid.astype(np.float32), p

    def object_mask(self, image_bytes: bytes, threshold: float) -> bytes:
        img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        if self.segmenter is None:
            raise ValueError("no segmenter model configured on this server")
        arr = np.asarray(img)[:, :, ::-1]  # detectron2 expects BGR
        with self._lock:
            outputs = self.segmenter(arr)
        instances = outputs["instances"].to("cpu")
        union = np.zeros((img.height, img.width), dtype=bool)
        # merge every detection scoring above the threshold
        for score, mask in zip(instances.scores.numpy(), instances.pred_masks.numpy()):
            if score > threshold:
                union |= mask.astype(bool)
        buf = io.BytesIO()
        Image.fromarray((union * 255).astype(np.uint8)).save(buf, format="PNG")
        return buf.getvalue()
