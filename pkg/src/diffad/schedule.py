"""Diffusion variance schedule and the subsampled timestep plan.

The schedule stores per-base-step noise rates beta_s and their cumulative
signal coefficients alpha_bar_t = prod_{s<=t}(1 - beta_s).  A timestep plan
subsamples the base steps with leading spacing; sampling walks the plan in
descending order, inversion in ascending order.

The fully denoised state sits one notch before the first plan index and is
represented by the ``CLEAN`` level, where alpha_bar is exactly 1.  That
convention makes the final sampling step return the clean-latent prediction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, ContractError

# Noise level of a fully denoised latent. alpha_bar_at(schedule, CLEAN) == 1.0.
CLEAN = None

SPACING_KINDS = ("linear", "scaled_linear")


@dataclass(frozen=True)
class ScheduleConfig:
    """Parameters of the base variance schedule.

    Defaults follow the released Stable Diffusion 2.1 scheduler
    (scaled-linear betas from 0.00085 to 0.012 over 1000 base steps).
    """

    num_base_steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    spacing: str = "scaled_linear"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScheduleConfig":
        raw = json.loads(text)
        known = {f: raw[f] for f in ("num_base_steps", "beta_start", "beta_end", "spacing") if f in raw}
        return cls(**known)


@dataclass(frozen=True)
class NoiseSchedule:
    """Base-step beta sequence and cumulative alpha_bar coefficients."""

    betas: np.ndarray
    alpha_bars: np.ndarray
    num_base_steps: int

    def __post_init__(self):
        if len(self.betas) != self.num_base_steps or len(self.alpha_bars) != self.num_base_steps:
            raise ContractError("betas/alpha_bars length must equal num_base_steps")


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly increasing base-step indices traversed by the loops."""

    base_indices: tuple[int, ...]
    num_plan_steps: int

    def __post_init__(self):
        if len(self.base_indices) != self.num_plan_steps:
            raise ContractError("plan length mismatch")
        if any(b >= a for a, b in zip(self.base_indices[1:], self.base_indices)):
            raise ContractError("plan indices must be strictly increasing")


def build_schedule(config: ScheduleConfig) -> NoiseSchedule:
    """Construct the variance schedule from its config.

    scaled_linear spacing squares a linear sweep of sqrt(beta):
    beta_s = (sqrt(beta_start) + (s/(N-1)) * (sqrt(beta_end) - sqrt(beta_start)))**2.
    Cumulative products are accumulated in double precision.
    """
    if config.num_base_steps < 1:
        raise ConfigError(f"num_base_steps must be >= 1, got {config.num_base_steps}")
    if not (0.0 < config.beta_start <= config.beta_end):
        raise ConfigError(
            f"beta_start must satisfy 0 < beta_start <= beta_end, got beta_start={config.beta_start}"
        )
    if not (config.beta_end < 1.0):
        raise ConfigError(f"beta_end must be < 1, got beta_end={config.beta_end}")
    if config.spacing not in SPACING_KINDS:
        raise ConfigError(f"spacing must be one of {SPACING_KINDS}, got spacing={config.spacing!r}")

    n = config.num_base_steps
    if config.spacing == "linear":
        betas = np.linspace(config.beta_start, config.beta_end, n, dtype=np.float64)
    else:
        betas = np.linspace(
            np.sqrt(config.beta_start), np.sqrt(config.beta_end), n, dtype=np.float64
        ) ** 2
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars, num_base_steps=n)


def build_plan(num_base_steps: int, num_plan_steps: int) -> TimestepPlan:
    """Leading-spaced plan: base_indices[i] = i * floor(num_base_steps / num_plan_steps)."""
    if num_plan_steps < 1 or num_plan_steps > num_base_steps:
        raise ConfigError(
            f"num_plan_steps must be in [1, num_base_steps], got num_plan_steps={num_plan_steps}"
        )
    stride = num_base_steps // num_plan_steps
    indices = tuple(i * stride for i in range(num_plan_steps))
    return TimestepPlan(base_indices=indices, num_plan_steps=num_plan_steps)


def alpha_bar_at(schedule: NoiseSchedule, position) -> float:
    """alpha_bar at a base index, or exactly 1.0 for the CLEAN level."""
    if position is CLEAN:
        return 1.0
    if not (0 <= position < schedule.num_base_steps):
        raise ContractError(
            f"base index {position} out of range [0, {schedule.num_base_steps})"
        )
    return float(schedule.alpha_bars[position])
