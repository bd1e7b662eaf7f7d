"""Deterministic reverse-sampling and inversion steps, plus the partial loops.

Both step directions are written in clean-prediction form: estimate the clean
latent implied by the current noise estimate, then re-noise it to the target
level.  With the noise estimate held fixed, the two directions are exact
algebraic inverses of each other, and stepping to the CLEAN level (alpha_bar
= 1) returns the clean-latent prediction itself.

Loops carry the latent in float64 internally so that rounding injected at
deep noise levels (where 1/sqrt(alpha_bar) is large) cannot breach the
single-precision roundtrip tolerance; latents are float32 at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, NumericError, PipelineStageError
from .schedule import CLEAN, NoiseSchedule, TimestepPlan, alpha_bar_at


@dataclass(frozen=True)
class LatentTensor:
    """A (channels, height, width) latent and its current noise level.

    noise_level is a base-step index, or CLEAN for a fully denoised latent.
    """

    data: np.ndarray
    noise_level: Optional[int] = CLEAN

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ContractError(f"latent must be rank-3 (C,H,W), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NumericError("latent contains non-finite values")


@dataclass(frozen=True)
class PromptCondition:
    """Optional text condition and guidance weight. text=None means unconditional."""

    text: Optional[str] = None
    guidance_weight: float = 3.5

    def __post_init__(self):
        if self.guidance_weight < 0:
            raise ConfigError(f"guidance_weight must be >= 0, got {self.guidance_weight}")


def prompt_for_object(object_word: str, mode: str = "template", guidance_weight: float = 3.5) -> PromptCondition:
    """Build the per-class condition: 'an image of a <object>' or the empty condition."""
    if mode == "empty":
        return PromptCondition(text=None, guidance_weight=guidance_weight)
    if mode == "template":
        return PromptCondition(text=f"an image of a {object_word}", guidance_weight=guidance_weight)
    raise ConfigError(f"prompt mode must be 'template' or 'empty', got {mode!r}")


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, w: float) -> np.ndarray:
    """Guided noise estimate: w * eps_cond + (1 - w) * eps_uncond."""
    if eps_cond.shape != eps_uncond.shape:
        raise ContractError(
            f"guidance inputs must share a shape, got {eps_cond.shape} vs {eps_uncond.shape}"
        )
    if w < 0:
        raise ContractError(f"guidance weight must be >= 0, got {w}")
    return w * eps_cond + (1.0 - w) * eps_uncond


def _step_to(z: np.ndarray, eps: np.ndarray, a_src: float, a_dst: float) -> np.ndarray:
    # clean-prediction form; scalar coefficients in float64
    x0 = (z - np.sqrt(1.0 - a_src) * eps) / np.sqrt(a_src)
    return np.sqrt(a_dst) * x0 + np.sqrt(1.0 - a_dst) * eps


def sample_step(
    z_t: LatentTensor,
    eps: np.ndarray,
    t,
    t_prev,
    schedule: NoiseSchedule,
) -> LatentTensor:
    """One deterministic denoising step from base level t to the earlier t_prev.

    t_prev may be CLEAN, in which case the result is the clean-latent
    prediction implied by eps.
    """
    if z_t.noise_level != t:
        raise ContractError(f"latent is at level {z_t.noise_level}, expected {t}")
    if eps.shape != z_t.data.shape:
        raise ContractError(f"eps shape {eps.shape} does not match latent {z_t.data.shape}")
    a_t = alpha_bar_at(schedule, t)
    a_prev = alpha_bar_at(schedule, t_prev)
    out = _step_to(z_t.data, eps, a_t, a_prev)
    if not np.all(np.isfinite(out)):
        raise NumericError("sample step produced non-finite values", step_index=t if t is not CLEAN else -1)
    return LatentTensor(data=out, noise_level=t_prev)


def invert_step(
    z_prev: LatentTensor,
    eps: np.ndarray,
    t_prev,
    t,
    schedule: NoiseSchedule,
) -> LatentTensor:
    """Mirror of sample_step solved for the noisier latent: t_prev -> t.

    With eps held fixed this is the exact algebraic inverse of sample_step.
    """
    if z_prev.noise_level != t_prev:
        raise ContractError(f"latent is at level {z_prev.noise_level}, expected {t_prev}")
    if eps.shape != z_prev.data.shape:
        raise ContractError(f"eps shape {eps.shape} does not match latent {z_prev.data.shape}")
    a_prev = alpha_bar_at(schedule, t_prev)
    a_t = alpha_bar_at(schedule, t)
    out = _step_to(z_prev.data, eps, a_prev, a_t)
    if not np.all(np.isfinite(out)):
        raise NumericError("invert step produced non-finite values", step_index=t)
    return LatentTensor(data=out, noise_level=t)


def _plan_levels(plan: TimestepPlan, t_prime: int) -> list:
    """Noise-level ladder [CLEAN, plan[0], ..., plan[t_prime-1]]."""
    if not (1 <= t_prime <= plan.num_plan_steps):
        raise ConfigError(
            f"t_prime must be in [1, {plan.num_plan_steps}], got t_prime={t_prime}"
        )
    return [CLEAN] + list(plan.base_indices[:t_prime])


def _eval_timestep(level) -> int:
    # backends take a base step; the clean level maps to base step 0
    return 0 if level is CLEAN else int(level)


def _guided_eps(backend, z: np.ndarray, base_t: int, prompt: PromptCondition) -> np.ndarray:
    if prompt.text is None:
        # conditional and unconditional coincide; one call, no combination
        return backend.predict_eps(z, base_t, None)
    eps_cond = backend.predict_eps(z, base_t, prompt.text)
    eps_uncond = backend.predict_eps(z, base_t, None)
    return cfg_combine(eps_cond, eps_uncond, prompt.guidance_weight)


def invert_array(
    z: np.ndarray,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Inversion loop on a float64 carry; used by invert and the fused pipeline."""
    levels = _plan_levels(plan, t_prime)
    cur = np.asarray(z, dtype=np.float64)
    for k in range(t_prime):
        src, dst = levels[k], levels[k + 1]
        try:
            eps = _guided_eps(backend, cur, _eval_timestep(src), prompt)
        except Exception as exc:
            raise PipelineStageError(f"denoiser backend (inversion step {k})", exc) from exc
        cur = _step_to(cur, eps, alpha_bar_at(schedule, src), alpha_bar_at(schedule, dst))
        if not np.all(np.isfinite(cur)):
            raise NumericError("inversion produced non-finite values", step_index=k)
    return cur


def reconstruct_array(
    z_tprime: np.ndarray,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Sampling loop on a float64 carry; mirror of invert_array."""
    levels = _plan_levels(plan, t_prime)
    cur = np.asarray(z_tprime, dtype=np.float64)
    for k in range(t_prime, 0, -1):
        src, dst = levels[k], levels[k - 1]
        try:
            eps = _guided_eps(backend, cur, _eval_timestep(src), prompt)
        except Exception as exc:
            raise PipelineStageError(f"denoiser backend (sampling step {k})", exc) from exc
        cur = _step_to(cur, eps, alpha_bar_at(schedule, src), alpha_bar_at(schedule, dst))
        if not np.all(np.isfinite(cur)):
            raise NumericError("sampling produced non-finite values", step_index=k)
    return cur


def invert(
    z: LatentTensor,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> LatentTensor:
    """Run t_prime inversion steps from the clean latent up the plan.

    The noise estimate for each step is evaluated at the latent and timestep
    being left (the clean level evaluates at base step 0).
    """
    if z.noise_level is not CLEAN:
        raise ContractError(f"invert expects a clean latent, got level {z.noise_level}")
    levels = _plan_levels(plan, t_prime)
    cur = invert_array(z.data, backend, prompt, plan, t_prime, schedule)
    return LatentTensor(data=cur.astype(np.float32), noise_level=levels[-1])


def reconstruct(
    z_tprime: LatentTensor,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> LatentTensor:
    """Denoise back down the same t_prime plan steps, returning a clean latent."""
    levels = _plan_levels(plan, t_prime)
    if z_tprime.noise_level != levels[-1]:
        raise ContractError(
            f"latent level {z_tprime.noise_level} does not match plan position {t_prime} "
            f"(base index {levels[-1]})"
        )
    cur = reconstruct_array(z_tprime.data, backend, prompt, plan, t_prime, schedule)
    return LatentTensor(data=cur.astype(np.float32), noise_level=CLEAN)


def invert_full_array(
    z: np.ndarray,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Invert through the whole plan, keep the trajectory latent at position t_prime."""
    levels = _plan_levels(plan, plan.num_plan_steps)
    if not (1 <= t_prime <= plan.num_plan_steps):
        raise ConfigError(f"t_prime must be in [1, {plan.num_plan_steps}], got t_prime={t_prime}")
    cur = np.asarray(z, dtype=np.float64)
    kept = None
    for k in range(plan.num_plan_steps):
        src, dst = levels[k], levels[k + 1]
        try:
            eps = _guided_eps(backend, cur, _eval_timestep(src), prompt)
        except Exception as exc:
            raise PipelineStageError(f"denoiser backend (inversion step {k})", exc) from exc
        cur = _step_to(cur, eps, alpha_bar_at(schedule, src), alpha_bar_at(schedule, dst))
        if not np.all(np.isfinite(cur)):
            raise NumericError("inversion produced non-finite values", step_index=k)
        if k + 1 == t_prime:
            kept = cur.copy()
    return kept


def invert_full_then_restart(
    z: LatentTensor,
    backend,
    prompt: PromptCondition,
    plan: TimestepPlan,
    t_prime: int,
    schedule: NoiseSchedule,
) -> LatentTensor:
    """Full-extent inversion mode (--invert-extent full).

    Deterministic inversion makes this equal to stopping at t_prime; the mode
    exists so both loop extents can be compared explicitly.
    """
    if z.noise_level is not CLEAN:
        raise ContractError(f"invert expects a clean latent, got level {z.noise_level}")
    levels = _plan_levels(plan, plan.num_plan_steps)
    kept = invert_full_array(z.data, backend, prompt, plan, t_prime, schedule)
    return LatentTensor(data=kept.astype(np.float32), noise_level=levels[t_prime])
