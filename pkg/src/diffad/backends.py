"""Pluggable denoiser / feature / segmenter backends.

The analytic Gaussian denoiser is the closed-form optimal noise predictor
when the clean-data law is elementwise Gaussian; together with the constant
backends it makes every loop in the pipeline verifiable without any neural
network.  Remote backends (see client.py) speak the same interfaces over the
wire protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .errors import ContractError
from .schedule import NoiseSchedule, alpha_bar_at


@dataclass(frozen=True)
class BackendCapabilities:
    latent_channels: int
    latent_side: int
    num_base_steps: int


@runtime_checkable
class DenoiserBackend(Protocol):
    """Noise predictor: eps(latent, base timestep, optional text condition)."""

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: Optional[str] = None) -> np.ndarray:
        ...


@dataclass(frozen=True)
class PatchFeatures:
    """A (grid_h, grid_w, dim) feature grid covering the image in patch_size tiles."""

    grid: np.ndarray
    patch_size: int

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise ContractError(f"feature grid must be rank-3, got shape {self.grid.shape}")
        if np.isnan(self.grid).any():
            raise ContractError("feature grid contains NaN rows")


@dataclass(frozen=True)
class ObjectMask:
    """Binary foreground mask, same size as the analyzed image."""

    pixels: np.ndarray

    def __post_init__(self):
        vals = np.unique(self.pixels)
        if not np.isin(vals, (0, 1)).all():
            raise ContractError("object mask must be binary {0,1}")


@dataclass(frozen=True)
class GaussianWorldModel:
    """Elementwise Gaussian clean-data law: z0 ~ N(mean, std**2).

    mean and std are scalars or arrays broadcastable against the latent.
    """

    mean: np.ndarray | float
    std: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise ContractError("world std must be positive everywhere")


def analytic_gaussian_eps(
    z_t: np.ndarray, base_t: int, model: GaussianWorldModel, schedule: NoiseSchedule
) -> np.ndarray:
    """Optimal noise estimate for a Gaussian world.

    Posterior mean of the clean latent given z_t = sqrt(a) z0 + sqrt(1-a) n:
        E[z0|z_t] = mu + (sqrt(a) s^2 / (a s^2 + 1 - a)) (z_t - sqrt(a) mu)
    and the implied noise estimate (z_t - sqrt(a) E[z0|z_t]) / sqrt(1-a).
    """
    a = alpha_bar_at(schedule, base_t)
    if a >= 1.0:
        raise ContractError("analytic denoiser is undefined at alpha_bar = 1 (clean level)")
    mu = np.asarray(model.mean, dtype=np.float64)
    s2 = np.asarray(model.std, dtype=np.float64) ** 2
    sqrt_a = np.sqrt(a)
    x0 = mu + (sqrt_a * s2 / (a * s2 + 1.0 - a)) * (z_t - sqrt_a * mu)
    return (z_t - sqrt_a * x0) / np.sqrt(1.0 - a)


class AnalyticGaussianDenoiser:
    """DenoiserBackend wrapper around analytic_gaussian_eps. Ignores the prompt."""

    def __init__(self, model: GaussianWorldModel, schedule: NoiseSchedule):
        self.model = model
        self.schedule = schedule

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: Optional[str] = None) -> np.ndarray:
        return analytic_gaussian_eps(latent, base_t, self.model, self.schedule)


class ConstantDenoiser:
    """Returns a constant noise tensor; the standard exact-roundtrip fixture."""

    def __init__(self, value: float | np.ndarray = 0.0):
        self.value = value

    def predict_eps(self, latent: np.ndarray, base_t: int, prompt: Optional[str] = None) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.value, dtype=latent.dtype), latent.shape).copy()


def constant_eps(z_t: np.ndarray, base_t: int, value: float | np.ndarray = 0.0) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=z_t.dtype), z_t.shape).copy()


def identity_features(image: np.ndarray) -> PatchFeatures:
    """Each pixel is its own patch; feature dim = channels."""
    if image.ndim != 3:
        raise ContractError(f"image must be (H, W, C), got shape {image.shape}")
    return PatchFeatures(grid=np.asarray(image, dtype=np.float64), patch_size=1)


def mean_pool_features(image: np.ndarray, patch_size: int) -> PatchFeatures:
    """Per-patch channel means on a (H/p, W/p) grid."""
    if image.ndim != 3:
        raise ContractError(f"image must be (H, W, C), got shape {image.shape}")
    h, w, c = image.shape
    if patch_size < 1 or h % patch_size or w % patch_size:
        raise ContractError(
            f"image sides ({h}, {w}) must be divisible by patch_size {patch_size}"
        )
    grid = (
        np.asarray(image, dtype=np.float64)
        .reshape(h // patch_size, patch_size, w // patch_size, patch_size, c)
        .mean(axis=(1, 3))
    )
    return PatchFeatures(grid=grid, patch_size=patch_size)


class IdentityFeatures:
    def extract(self, image: np.ndarray) -> PatchFeatures:
        return identity_features(image)


class MeanPoolFeatures:
    def __init__(self, patch_size: int):
        self.patch_size = patch_size

    def extract(self, image: np.ndarray) -> PatchFeatures:
        return mean_pool_features(image, self.patch_size)


class ArrayImageCodec:
    """Analytic encoder/decoder: affine map between images and latents.

    encode: z = (image - center) * gain, channels-first.  Scaling puts desk
    latents on the unit scale the schedule is calibrated for, mirroring how a
    trained autoencoder normalizes its latent space.  The defaults (center 0,
    power-of-two gain) make decode(encode(x)) bitwise exact in float32, so an
    exact latent roundtrip yields a bitwise-identical reconstruction image.
    """

    def __init__(self, center: float = 0.0, gain: float = 4.0):
        self.center = center
        self.gain = gain

    def encode(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3:
            raise ContractError(f"image must be (H, W, C), got shape {image.shape}")
        return ((np.asarray(image, dtype=np.float64) - self.center) * self.gain).transpose(2, 0, 1).astype(np.float32)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        if latent.ndim != 3:
            raise ContractError(f"latent must be (C, H, W), got shape {latent.shape}")
        return (np.asarray(latent, dtype=np.float64).transpose(1, 2, 0) / self.gain + self.center).astype(np.float32)

    def world_to_latent(self, mean_image: np.ndarray | float, std_image: np.ndarray | float) -> GaussianWorldModel:
        """Map an image-space Gaussian world through the encoder."""
        mean = (np.asarray(mean_image, dtype=np.float64) - self.center) * self.gain
        std = np.asarray(std_image, dtype=np.float64) * self.gain
        if mean.ndim == 3:
            mean = mean.transpose(2, 0, 1)
        if std.ndim == 3:
            std = std.transpose(2, 0, 1)
        return GaussianWorldModel(mean=mean, std=std)


class AllOnesSegmenter:
    """Fallback segmenter: everything is foreground."""

    def get_mask(self, image: np.ndarray, sample_id: str | None = None) -> ObjectMask:
        return ObjectMask(pixels=np.ones(image.shape[:2], dtype=np.uint8))


class OracleSegmenter:
    """Looks up ground-truth object masks by sample id (synthetic corpora)."""

    def __init__(self, masks: dict):
        self.masks = masks

    def get_mask(self, image: np.ndarray, sample_id: str | None = None) -> ObjectMask:
        if sample_id not in self.masks:
            raise ContractError(f"no oracle object mask for sample {sample_id!r}")
        return ObjectMask(pixels=np.asarray(self.masks[sample_id], dtype=np.uint8))
