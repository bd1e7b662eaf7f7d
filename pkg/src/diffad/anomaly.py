"""Anomaly scoring head: feature dissimilarity, map post-processing, per-image pipeline."""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .backends import ObjectMask, PatchFeatures
from .ddim import (
    PromptCondition,
    invert_array,
    invert_full_array,
    reconstruct_array,
)
from .errors import ContractError, PipelineStageError
from .schedule import NoiseSchedule, TimestepPlan


def dissimilarity_map(features: PatchFeatures, features_rec: PatchFeatures) -> np.ndarray:
    """Per-cell cosine dissimilarity 1 - cos(F, F_rec), in [0, 2].

    Cells where either feature vector has zero norm score 0 (no evidence).
    """
    a, b = features.grid, features_rec.grid
    if a.shape != b.shape:
        raise ContractError(f"feature grids must be congruent, got {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dot = (a * b).sum(axis=-1)
    na2 = (a * a).sum(axis=-1)
    nb2 = (b * b).sum(axis=-1)
    out = np.zeros(a.shape[:-1], dtype=np.float64)
    ok = (na2 > 0) & (nb2 > 0)
    # single sqrt of the product keeps identical grids at exactly zero
    out[ok] = 1.0 - dot[ok] / np.sqrt(na2[ok] * nb2[ok])
    return np.clip(out, 0.0, 2.0)


def upsample_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear interpolation with half-pixel centers (align-corners false)."""
    if out_h < 1 or out_w < 1:
        raise ContractError(f"output dims must be positive, got ({out_h}, {out_w})")
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2:
        raise ContractError(f"grid must be rank-2, got shape {g.shape}")
    in_h, in_w = g.shape
    if out_h < in_h or out_w < in_w:
        raise ContractError(
            f"output dims ({out_h}, {out_w}) must be >= grid dims ({in_h}, {in_w})"
        )
    if (out_h, out_w) == (in_h, in_w):
        return g.copy()

    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]

    tl = g[np.ix_(y0, x0)]
    tr = g[np.ix_(y0, x1)]
    bl = g[np.ix_(y1, x0)]
    br = g[np.ix_(y1, x1)]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return top + (bot - top) * fy


def apply_mask(anomaly_map: np.ndarray, mask: ObjectMask) -> np.ndarray:
    """Elementwise product of the map with the binary object mask."""
    if anomaly_map.shape != mask.pixels.shape:
        raise ContractError(
            f"map {anomaly_map.shape} and mask {mask.pixels.shape} dims must match"
        )
    return anomaly_map * mask.pixels


def image_score(anomaly_map: np.ndarray, reduction: str = "max", topk_fraction: float = 0.01) -> float:
    """Reduce a map to a scalar: max (default) or mean of the top-k fraction."""
    if anomaly_map.size == 0:
        raise ContractError("cannot score an empty map")
    if reduction == "max":
        return float(anomaly_map.max())
    if reduction == "topk_mean":
        k = max(1, int(np.ceil(topk_fraction * anomaly_map.size)))
        flat = np.sort(anomaly_map.ravel())
        return float(flat[-k:].mean())
    raise ContractError(f"unknown reduction {reduction!r}")


def gaussian_smooth(anomaly_map: np.ndarray, sigma: float) -> np.ndarray:
    """Optional map smoothing; sigma = 0 is the identity (default pipeline)."""
    if sigma <= 0:
        return anomaly_map
    from scipy.ndimage import gaussian_filter

    return gaussian_filter(anomaly_map, sigma=sigma)


@dataclass(frozen=True)
class AnomalyResult:
    """Per-image output: raw map, masked map, scalar score, run metadata."""

    map: np.ndarray
    masked_map: np.ndarray
    image_score: float
    metadata: dict = field(default_factory=dict)


@dataclass
class PipelineBackends:
    """Backend bundle consumed by score_image."""

    codec: object                 # encode(image)->latent array, decode(latent)->image
    denoiser: object              # DenoiserBackend
    features: object              # extract(image)->PatchFeatures
    segmenter: Optional[object] = None   # get_mask(image, sample_id)->ObjectMask


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


def score_image(
    image: np.ndarray,
    class_cfg,
    backends: PipelineBackends,
    schedule: NoiseSchedule,
    plan: TimestepPlan,
    t_prime: int,
    prompt: PromptCondition,
    sample_id: str = "",
    invert_extent: str = "partial",
    score_reduction: str = "max",
    topk_fraction: float = 0.01,
    smooth_sigma: float = 0.0,
) -> AnomalyResult:
    """Full scoring pipeline for one image.

    encode -> invert (t_prime steps) -> reconstruct -> decode -> features on
    input and reconstruction -> cosine dissimilarity -> upsample to image
    size -> optional object masking -> scalar score.
    """
    h, w = image.shape[:2]

    latent = _stage("encode", backends.codec.encode, image)
    # fused loops carry float64 end to end; latents are float32 only at the
    # codec and wire boundaries
    z = np.asarray(latent, dtype=np.float32)
    invert_fn = invert_full_array if invert_extent == "full" else invert_array
    z_noisy = invert_fn(z, backends.denoiser, prompt, plan, t_prime, schedule)
    z_rec = reconstruct_array(z_noisy, backends.denoiser, prompt, plan, t_prime, schedule)
    reconstruction = _stage("decode", backends.codec.decode, z_rec.astype(np.float32))

    feats_in = _stage("features(input)", backends.features.extract, image)
    feats_rec = _stage("features(reconstruction)", backends.features.extract, reconstruction)
    grid_map = _stage("dissimilarity", dissimilarity_map, feats_in, feats_rec)
    raw_map = _stage("upsample", upsample_bilinear, grid_map, h, w)
    raw_map = gaussian_smooth(raw_map, smooth_sigma)

    metadata = {
        "sample_id": sample_id,
        "class_name": getattr(class_cfg, "class_name", ""),
        "t_prime": t_prime,
        "prompt_mode": "empty" if prompt.text is None else "template",
        "mask_applied": False,
        "mask_fallback": False,
    }

    masked = raw_map
    if getattr(class_cfg, "apply_object_mask", False):
        try:
            mask = backends.segmenter.get_mask(image, sample_id) if backends.segmenter else None
        except Exception as exc:
            warnings.warn(f"segmenter failed for {sample_id!r}, using all-ones mask: {exc}")
            mask = None
            metadata["mask_fallback"] = True
        if mask is not None:
            masked = apply_mask(raw_map, mask)
        metadata["mask_applied"] = True

    score = image_score(masked, reduction=score_reduction, topk_fraction=topk_fraction)
    return AnomalyResult(
        map=raw_map,
        masked_map=masked,
        image_score=score,
        metadata=metadata,
    )


def heatmap_png_bytes(anomaly_map: np.ndarray) -> bytes:
    """8-bit grayscale PNG; values linearly mapped from [0, max] to [0, 255]."""
    peak = float(anomaly_map.max())
    if peak > 0:
        scaled = (anomaly_map / peak * 255.0 + 0.5).astype(np.uint8)
    else:
        scaled = np.zeros(anomaly_map.shape, dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(scaled, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def heatmap_sidecar_json(result: AnomalyResult) -> str:
    payload = {
        "image_score": float(result.image_score),
        "map_max": float(result.masked_map.max()),
        "t_prime": result.metadata.get("t_prime"),
    }
    return json.dumps(payload, sort_keys=True)
