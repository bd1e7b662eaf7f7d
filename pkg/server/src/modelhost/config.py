"""Server configuration."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8787
    device: str = "cuda"
    deterministic: bool = True
    stub: bool = False
    # model ids for the real bundle
    diffusion_model: str = "stabilityai/stable-diffusion-2-1"
    feature_model: str = "dino_vits8"
    segmenter_model: str = "cutler_cascade_mask_rcnn"
    segmenter_config: str | None = None       # detectron2 config path
    segmenter_weights: str | None = None      # checkpoint path
    max_concurrent_requests: int = 8
